"""Scikit-learn style wrapper around the residual CNN surrogate."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from ..layout import rasterize_batch
from ..validation import check_images, check_spectra, check_templates, is_template_input
from .network import MiniResNet, SurrogateConfig, count_parameters

log = logging.getLogger(__name__)

# bytes of activations budgeted per inference mini-batch
DEFAULT_MEMORY_BUDGET = 512 * 2 ** 20


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    baseline_val_mae: float = float("nan")
    test_mae: float | None = None
    n_params: int = 0
    train_size: int = 0

    @property
    def final_val_mae(self) -> float:
        return self.epochs[-1]["val_mae"] if self.epochs else float("nan")

    def to_json(self) -> dict:
        return {"epochs": self.epochs, "baseline_val_mae": self.baseline_val_mae,
                "test_mae": self.test_mae, "n_params": self.n_params,
                "train_size": self.train_size}


def _as_images(X, dtype=np.float32) -> np.ndarray:
    if is_template_input(X):
        return rasterize_batch(check_templates(X), dtype=dtype)
    return check_images(X).astype(dtype, copy=False)


class SurrogateRegressor(RegressorMixin, BaseEstimator):
    """Predict the 168-entry S-parameter vector from via footprints.

    ``X`` may be either a ``(n, 10)`` array of templates, which are
    rasterized on the fly batch by batch, or a ``(n, 90, 584)`` image stack.
    """

    def __init__(self, widths=(8, 16, 32, 64), blocks_per_stage=2, hidden=256,
                 negative_slope=0.01, lr=1e-3, weight_decay=0.0, batch_size=64, epochs=60,
                 seed=0, double=False, verbose=0):
        self.widths = widths
        self.blocks_per_stage = blocks_per_stage
        self.hidden = hidden
        self.negative_slope = negative_slope
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.double = double
        self.verbose = verbose

    # -- construction -----------------------------------------------------
    def config(self) -> SurrogateConfig:
        return SurrogateConfig(widths=tuple(self.widths), blocks_per_stage=self.blocks_per_stage,
                               hidden=self.hidden, negative_slope=self.negative_slope,
                               lr=self.lr, weight_decay=self.weight_decay,
                               batch_size=self.batch_size, epochs=self.epochs, seed=self.seed)

    @classmethod
    def from_config(cls, cfg: SurrogateConfig, **kw) -> "SurrogateRegressor":
        return cls(widths=cfg.widths, blocks_per_stage=cfg.blocks_per_stage, hidden=cfg.hidden,
                   negative_slope=cfg.negative_slope, lr=cfg.lr, weight_decay=cfg.weight_decay,
                   batch_size=cfg.batch_size, epochs=cfg.epochs, seed=cfg.seed, **kw)

    @property
    def _dtype(self):
        return torch.float64 if self.double else torch.float32

    def _build(self) -> MiniResNet:
        net = MiniResNet(self.config())
        return net.to(self._dtype)

    def initialize(self) -> "SurrogateRegressor":
        """Create a freshly initialized network without training."""
        self.model_ = self._build()
        self.model_.eval()
        self.n_params_ = count_parameters(self.model_)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("SurrogateRegressor is not fitted yet")

    # -- training ---------------------------------------------------------
    def fit(self, X, y, eval_set=None):
        """Minimize the mean absolute error with Adam and cosine decay.

        ``eval_set=(X_val, y_val)`` enables per-epoch validation, the
        constant-predictor baseline and divergence detection.
        """
        y = check_spectra(y)
        n = len(y)
        if n == 0:
            raise ValueError("empty training set")
        templates = is_template_input(X)
        X = check_templates(X) if templates else check_images(X)
        if len(X) != n:
            raise ValueError("X and y have different lengths")
        np_dtype = np.float64 if self.double else np.float32

        self.model_ = self._build()
        self.n_params_ = count_parameters(self.model_)
        opt = torch.optim.Adam(self.model_.parameters(), lr=self.lr, weight_decay=self.weight_decay)
        batches = max(1, n // self.batch_size)
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=self.epochs * batches)
        rng = np.random.default_rng(self.seed)

        report = TrainReport(n_params=self.n_params_, train_size=n)
        if eval_set is not None:
            X_val, y_val = eval_set
            y_val = check_spectra(y_val)
            report.baseline_val_mae = float(np.abs(y_val - y.mean(axis=0)).mean())

        y_t = torch.as_tensor(y, dtype=self._dtype)
        for epoch in range(self.epochs):
            t0 = time.perf_counter()
            self.model_.train()
            perm = rng.permutation(n)
            total, count = 0.0, 0
            for b in range(batches):
                idx = np.sort(perm[b * self.batch_size:(b + 1) * self.batch_size])
                xb = rasterize_batch(X[idx], dtype=np_dtype) if templates else X[idx].astype(np_dtype)
                pred = self.model_(torch.from_numpy(xb))
                loss = (pred - y_t[idx]).abs().mean()
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                sched.step()
                if not torch.isfinite(loss):
                    raise TrainingDiverged(f"epoch {epoch + 1}, batch {b}: loss is {loss.item()}; "
                                           f"lr={self.lr}, batch={self.batch_size}")
                total += loss.item() * len(idx)
                count += len(idx)
            self.model_.eval()
            row = {"epoch": epoch + 1, "train_mae": total / count,
                   "seconds": time.perf_counter() - t0}
            if eval_set is not None:
                row["val_mae"] = self.mae(X_val, y_val)
                if (epoch + 1 >= self.warmup_epochs_
                        and row["val_mae"] > self.divergence_factor_ * report.baseline_val_mae):
                    raise TrainingDiverged(
                        f"epoch {epoch + 1}: val MAE {row['val_mae']:.4f} exceeds "
                        f"{self.divergence_factor_}x constant baseline {report.baseline_val_mae:.4f}; "
                        f"lr={self.lr}, batch={self.batch_size}")
            report.epochs.append(row)
            if self.verbose:
                log.info("epoch %d train %.4f val %s (%.1fs)", epoch + 1, row["train_mae"],
                         f"{row['val_mae']:.4f}" if "val_mae" in row else "-", row["seconds"])
        self.report_ = report
        return self

    warmup_epochs_ = 1
    divergence_factor_ = 10.0

    # -- inference --------------------------------------------------------
    def _batch_size_for(self, budget: int) -> int:
        # rough activation footprint per image of the widest early stage
        per_image = 4 * 90 * 584 * max(self.widths) // 2
        return int(max(1, min(4096, budget // max(per_image, 1))))

    def predict(self, X, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> np.ndarray:
        self._check_fitted()
        templates = is_template_input(X)
        X = check_templates(X) if templates else check_images(X)
        bs = self._batch_size_for(memory_budget)
        np_dtype = np.float64 if self.double else np.float32
        out = np.empty((len(X), 168), dtype=np_dtype)
        self.model_.eval()
        with torch.no_grad():
            for s in range(0, len(X), bs):
                chunk = X[s:s + bs]
                xb = rasterize_batch(chunk, dtype=np_dtype) if templates else chunk.astype(np_dtype)
                out[s:s + bs] = self.model_(torch.from_numpy(xb)).numpy()
        return out

    def forward(self, images) -> np.ndarray:
        """Batched forward on images (n, 90, 584) or a single image."""
        single = np.ndim(images) == 2
        out = self.predict(_as_images(images, np.float64 if self.double else np.float32))
        return out[0] if single else out

    def mae(self, X, y) -> float:
        y = check_spectra(y)
        return float(np.abs(self.predict(X) - y).mean())

    def score(self, X, y, sample_weight=None):
        """Negative mean absolute error (higher is better)."""
        return -self.mae(X, y)


class SurrogateSimulator:
    """Simulator handle: template array -> predicted 168-vectors.

    Duplicate templates in a batch are evaluated once.
    """

    name = "surrogate"

    def __init__(self, model: SurrogateRegressor, memory_budget: int = DEFAULT_MEMORY_BUDGET):
        self.model = model
        self.memory_budget = memory_budget

    def simulate(self, templates) -> np.ndarray:
        templates = check_templates(templates)
        keys = np.round(templates * 10).astype(np.int64)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        pred = self.model.predict(uniq / 10.0, memory_budget=self.memory_budget)
        return pred[inverse.reshape(-1)].astype(np.float64)
