"""scikit-learn style wrapper: ``fit(degraded, clean)`` / ``predict(degraded)``."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .metrics import psnr
from .objective import DEFAULT_AUX_WEIGHT
from .network import ModelConfig, build
from .trainer import Batch, TrainConfig, restore, sample_key_rng, train


def _check_images(X, name: str = "X") -> np.ndarray:
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[-1] != 3:
        raise ValueError(f"{name} must be [N, H, W, 3] images, got shape {X.shape}")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return X


class MoceRestorer(RegressorMixin, BaseEstimator):
    """Image restorer trained on paired ``[N, H, W, 3]`` arrays in [0, 1].

    ``score`` returns mean PSNR in dB rather than R^2.
    """

    def __init__(
        self,
        base_channels: int = 8,
        encoder_blocks: tuple[int, ...] = (2, 2),
        decoder_blocks: tuple[int, ...] = (2,),
        refinement_blocks: int = 1,
        n_experts: int = 4,
        steps: int = 200,
        batch_size: int = 8,
        lr: float = 1e-3,
        aux_weight: float = DEFAULT_AUX_WEIGHT,
        fourier_weight: float = 0.1,
        balance: str = "complexity",
        seed: int = 0,
    ):
        self.base_channels = base_channels
        self.encoder_blocks = encoder_blocks
        self.decoder_blocks = decoder_blocks
        self.refinement_blocks = refinement_blocks
        self.n_experts = n_experts
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.aux_weight = aux_weight
        self.fourier_weight = fourier_weight
        self.balance = balance
        self.seed = seed

    def fit(self, X, y):
        X = _check_images(X)
        y = _check_images(y, "y")
        if X.shape != y.shape:
            raise ValueError(f"X {X.shape} and y {y.shape} differ in shape")
        crop = X.shape[1]
        model_cfg = ModelConfig(
            base_channels=self.base_channels,
            encoder_blocks=tuple(self.encoder_blocks),
            decoder_blocks=tuple(self.decoder_blocks),
            refinement_blocks=self.refinement_blocks,
            n_experts=self.n_experts,
            crop_size=crop,
        )
        train_cfg = TrainConfig(
            steps=self.steps, batch_size=self.batch_size, lr=self.lr, crop=crop,
            aux_weight=self.aux_weight, fourier_weight=self.fourier_weight,
            balance=self.balance, seed=self.seed,
        )
        model = build(model_cfg, self.seed)

        def batch_fn(step: int) -> Batch:
            clean, degraded, keys = [], [], []
            for i in range(train_cfg.batch_size):
                key = (int(self.seed), step, i)
                rng = sample_key_rng(key)
                j = int(rng.integers(len(X)))
                c, d = y[j], X[j]
                if rng.random() < 0.5:
                    c, d = c[:, ::-1], d[:, ::-1]
                if rng.random() < 0.5:
                    c, d = c[::-1], d[::-1]
                clean.append(c)
                degraded.append(d)
                keys.append(key)
            return Batch(np.stack(clean), np.stack(degraded), ["data"] * len(keys), keys)

        state = train(model, train_cfg, batch_fn=batch_fn)
        self.model_ = model
        self.log_ = state.log
        self.image_shape_ = X.shape[1:]
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = _check_images(X)
        out, _ = restore(self.model_, X)
        return out

    def routing(self, X) -> np.ndarray:
        """``[N, layers]`` 1-based experts chosen at inference."""
        check_is_fitted(self, "model_")
        _, records = restore(self.model_, _check_images(X))
        return np.concatenate([r.selections() for r in records]) + 1

    def score(self, X, y, sample_weight=None) -> float:
        y = _check_images(y, "y")
        pred = self.predict(X)
        scores = np.array([psnr(p, t) for p, t in zip(pred, y)])
        return float(np.average(scores, weights=sample_weight))
