"""Command-line entry point: ``moce train | eval | route-stats | flops | gradcheck | config-reference``.

Exit codes: 0 success, 1 failed check, 2 configuration or usage error,
3 training diverged (non-finite loss), 4 corrupt checkpoint.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import degradations, runconfig
from .metrics import psnr, routing_report, ssim
from .moce import ConfigError
from .network import MoceIR, build, forward
from .numerics import no_grad
from .trainer import AdamState, TrainingDiverged, TrainState, restore, train

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_CORRUPT = 4

EVAL_STREAM = 7


class UsageError(Exception):
    pass


# -- checkpoint <-> model ------------------------------------------------

def to_checkpoint(model: MoceIR, cfg: runconfig.RunConfig, state: TrainState | None = None) -> ckpt_io.Checkpoint:
    config = dict(cfg.to_strings())
    tensors = {f"param/{k}": p.data for k, p in model.named_parameters()}
    if state is not None:
        config["step"] = str(state.step)
        config["adam_t"] = str(state.adam.t)
        names = [k for k, _ in model.named_parameters()]
        tensors.update({f"adam_m/{k}": m for k, m in zip(names, state.adam.m)})
        tensors.update({f"adam_v/{k}": v for k, v in zip(names, state.adam.v)})
    return ckpt_io.Checkpoint(config, tensors)


def from_checkpoint(ckpt: ckpt_io.Checkpoint) -> tuple[MoceIR, runconfig.RunConfig, TrainState | None]:
    cfg = runconfig.from_strings(ckpt.config)
    model = build(cfg.model_config(), cfg["seed"])
    model.load_state_dict(ckpt.group("param"))
    state = None
    if "step" in ckpt.config:
        m, v = ckpt.group("adam_m"), ckpt.group("adam_v")
        names = [k for k, _ in model.named_parameters()]
        if set(m) != set(names) or set(v) != set(names):
            raise ckpt_io.CheckpointError("optimizer state does not match the model parameters")
        adam = AdamState([m[k].copy() for k in names], [v[k].copy() for k in names], int(ckpt.config["adam_t"]))
        state = TrainState(int(ckpt.config["step"]), adam)
    return model, cfg, state


def _load_model(path: str):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return from_checkpoint(ckpt_io.load(path))


# -- argument helpers -----------------------------------------------------

def _size(text: str | None, default: int) -> tuple[int, int]:
    if text is None:
        return default, default
    parts = text.lower().replace("×", "x").split("x")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise UsageError(f"--size must look like HxW, got {text!r}") from None
    if len(dims) == 1:
        dims = dims * 2
    if len(dims) != 2 or min(dims) <= 0:
        raise UsageError(f"--size must look like HxW, got {text!r}")
    return dims


def _task_params(items: list[str] | None) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--param expects key=value, got {item!r}")
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise UsageError(f"--param value must be numeric, got {item!r}") from None
    return out


def _tasks(arg: str | None, cfg: runconfig.RunConfig) -> tuple[str, ...]:
    if arg is None:
        return tuple(cfg["task_mix"])
    if arg == "all":
        return degradations.TASKS
    tasks = tuple(t.strip() for t in arg.split(",") if t.strip())
    bad = [t for t in tasks if t not in degradations.TASKS]
    if bad or not tasks:
        raise UsageError(f"unknown task(s) {bad}; choose from {degradations.TASKS}")
    return tasks


def eval_seed(seed: int, task: str) -> int:
    """Image seed base for evaluation sets; disjoint from the training data stream."""
    seq = np.random.SeedSequence([int(seed), degradations.TASKS.index(task)], spawn_key=(EVAL_STREAM,))
    return int(seq.generate_state(1, np.uint64)[0] >> np.uint64(1))


def eval_set(task: str, n: int, seed: int, size, params: dict | None = None):
    return degradations.make_dataset((task,), n, eval_seed(seed, task), size, {task: params} if params else None)


def _fmt(x: float) -> str:
    return "inf" if x == float("inf") else f"{x:.4f}"


# -- commands ---------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = runconfig.load(args.config)
    tcfg = cfg.train_config()
    if args.resume:
        model, saved_cfg, state = _load_model(args.resume)
        if saved_cfg.model_config() != cfg.model_config():
            raise UsageError("resume checkpoint was trained with a different model configuration")
        if state is None:
            raise UsageError("resume checkpoint carries no optimizer state")
    else:
        model = build(cfg.model_config(), cfg["seed"])
        state = None
    log_path = Path(args.log) if args.log else Path(str(args.checkpoint) + ".log.jsonl")
    with open(log_path, "w") as log:
        log.write(json.dumps({"header": cfg.to_strings()}, sort_keys=True) + "\n")
        try:
            state = train(
                model, tcfg, state, stop_at=args.stop_at,
                on_step=lambda rec: log.write(json.dumps(rec, sort_keys=True) + "\n"),
            )
        except TrainingDiverged as err:
            log.write(json.dumps({"error": str(err), "step": err.step, "op": err.op}) + "\n")
            print(f"error: {err}", file=sys.stderr)
            return EXIT_DIVERGED
        for snap in state.snapshots:
            log.write(json.dumps({"snapshot": snap}, sort_keys=True) + "\n")
    ckpt_io.save(args.checkpoint, to_checkpoint(model, cfg, state))
    print(f"wrote {args.checkpoint} at step {state.step}; log {log_path}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    model, cfg, _ = _load_model(args.checkpoint)
    size = _size(args.size, cfg["crop"])
    params = _task_params(args.param)
    force = None if args.force is None else args.force - 1
    print("task,samples,psnr_degraded,psnr_restored,ssim_degraded,ssim_restored,mean_macs")
    for task in _tasks(args.task, cfg):
        samples = eval_set(task, args.samples, args.seed, size, params)
        deg = np.stack([s.degraded for s in samples])
        out, records = restore(model, deg, force=force)
        macs = np.concatenate([r.macs for r in records])
        p_in = np.mean([psnr(s.degraded, s.clean) for s in samples])
        p_out = np.mean([psnr(o, s.clean) for o, s in zip(out, samples)])
        s_in = np.mean([ssim(s.degraded, s.clean) for s in samples])
        s_out = np.mean([ssim(o, s.clean) for o, s in zip(out, samples)])
        print(f"{task},{len(samples)},{_fmt(p_in)},{_fmt(p_out)},{_fmt(s_in)},{_fmt(s_out)},{macs.mean():.1f}")
    return EXIT_OK


def cmd_route_stats(args) -> int:
    model, cfg, _ = _load_model(args.checkpoint)
    size = _size(args.size, cfg["crop"])
    pairs = []
    with no_grad():
        for task in _tasks(args.task, cfg):
            samples = eval_set(task, args.samples, args.seed, size)
            deg = np.stack([s.degraded for s in samples])
            for i in range(0, len(deg), 32):
                chunk = deg[i:i + 32]
                keys = [(args.seed, degradations.TASKS.index(task), i + j) for j in range(len(chunk))]
                rec = forward(model, chunk, train_mode=args.noisy, noise_keys=keys if args.noisy else None)
                pairs.append((rec.selections(), task))
    hist = routing_report(pairs, cfg["n_experts"])
    sys.stdout.write(hist.to_csv())
    for line in hist.summary().splitlines():
        print(f"# {line}")
    for task, p in hist.task_purity().items():
        print(f"# purity {task} {p:.4f}")
    return EXIT_OK


def cmd_flops(args) -> int:
    if args.checkpoint:
        model, cfg, _ = _load_model(args.checkpoint)
    elif args.config:
        cfg = runconfig.load(args.config)
        model = build(cfg.model_config(), cfg["seed"])
    else:
        cfg = runconfig.RunConfig.defaults()
        model = build(cfg.model_config(), cfg["seed"])
    h, w = _size(args.size, cfg["crop"])
    x = np.random.default_rng(0).uniform(0, 1, size=(1, h, w, 3))
    print("path,macs,ratio_to_lightest")
    base = None
    with no_grad():
        for e in range(cfg["n_experts"]):
            rec = forward(model, x, force=e)
            macs = int(rec.macs[0])
            base = base or macs
            print(f"expert{e + 1},{macs},{macs / base:.4f}")
        n_layers = cfg.model_config().num_moce_layers
        for layer_idx in range(n_layers):
            for e in range(cfg["n_experts"]):
                force = [0] * n_layers
                force[layer_idx] = e
                rec = forward(model, x, force=force)
                print(f"layer{layer_idx}.expert{e + 1},{int(rec.traces[layer_idx].expert_macs[0])},")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck_suite import check_model, run_op_checks

    results = run_op_checks(args.seed)
    if not args.ops_only:
        results.append(check_model(args.seed))
    print("check,max_rel_error,tolerance,status")
    for r in results:
        print(f"{r.name},{r.error:.3e},{r.tolerance:.0e},{'pass' if r.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


def cmd_reference(args) -> int:
    sys.stdout.write(runconfig.reference())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moce", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a run configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-at", type=int, help="stop after this many total steps")
    p.add_argument("--log", help="JSONL training log (default: <checkpoint>.log.jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="PSNR/SSIM on a generated evaluation set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", help="task name, comma list or 'all' (default: training mix)")
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", help="HxW (default: training crop)")
    p.add_argument("--param", action="append", help="generator override key=value (repeatable)")
    p.add_argument("--force", type=int, help="pin every router to this 1-based expert")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("route-stats", help="expert-selection frequencies per layer and task")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task")
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size")
    p.add_argument("--noisy", action="store_true", help="route with training-time noise")
    p.set_defaults(func=cmd_route_stats)

    p = sub.add_parser("flops", help="multiply-accumulate counts per routing path")
    p.add_argument("--checkpoint")
    p.add_argument("--config")
    p.add_argument("--size")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("gradcheck", help="central-difference check of every registered op")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ops-only", action="store_true", help="skip the end-to-end model check")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("config-reference", help="print every run-config key with its default")
    p.set_defaults(func=cmd_reference)
    return parser


def _check_threads() -> None:
    value = os.environ.get("MOCE_THREADS")
    if value is not None and (not value.isdigit() or int(value) < 1):
        raise UsageError(f"MOCE_THREADS must be a positive integer, got {value!r}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _check_threads()
        if getattr(args, "samples", 1) is not None and getattr(args, "samples", 1) < 1:
            raise UsageError("--samples must be positive")
        return args.func(args)
    except ckpt_io.CheckpointError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CORRUPT
    except (UsageError, ConfigError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
