"""Training entry points, gradient checking and accuracy reporting."""
from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from ..dataset import Corpus
from .estimator import SurrogateRegressor, TrainReport
from .network import SurrogateConfig


def train(cfg: SurrogateConfig, corpus: Corpus, train_size: int | None = None,
          verbose: int = 0) -> tuple[SurrogateRegressor, TrainReport]:
    """Fit on the corpus train split (or its nested prefix) and report."""
    train_idx = corpus.split_indices("train") if train_size is None else corpus.train_subset(train_size)
    val_idx = corpus.split_indices("val")
    test_idx = corpus.split_indices("test")
    if train_idx.size == 0 or val_idx.size == 0:
        raise ValueError("corpus needs nonempty train and val splits")
    model = SurrogateRegressor.from_config(cfg, verbose=verbose)
    model.fit(corpus.templates[train_idx], corpus.spectra[train_idx],
              eval_set=(corpus.templates[val_idx], corpus.spectra[val_idx]))
    report = model.report_
    if test_idx.size:
        report.test_mae = model.mae(corpus.templates[test_idx], corpus.spectra[test_idx])
    return model, report


def scaling_ablation(sizes, cfg: SurrogateConfig, corpus: Corpus, verbose: int = 0):
    """Train one model per nested training size; returns [(size, test MAE)]."""
    sizes = [int(s) for s in sizes]
    if len(set(sizes)) != len(sizes):
        raise ValueError(f"duplicate training sizes in {sizes}")
    curve = []
    for size in sorted(sizes):
        _, report = train(cfg, corpus, train_size=size, verbose=verbose)
        curve.append((size, report.test_mae))
    return curve


def gradient_check(module: nn.Module, inputs: torch.Tensor, n_params: int = 50,
                   step: float = 1e-3, seed: int = 0) -> float:
    """Compare autograd against central differences on random parameters.

    The scalar probed is a fixed random projection of the module output.
    Returns the relative error ``||g_auto - g_fd|| / max(||g_auto||, ||g_fd||)``
    over the sampled parameter entries.
    """
    gen = torch.Generator().manual_seed(seed)
    was_training = module.training
    module.eval()
    params = [p for p in module.parameters() if p.requires_grad]
    with torch.no_grad():
        out = module(inputs)
    proj = torch.randn(out.shape, generator=gen, dtype=out.dtype)

    def objective():
        return (module(inputs) * proj).sum()

    module.zero_grad()
    objective().backward()
    sizes = torch.tensor([p.numel() for p in params], dtype=torch.float64)
    picks = []
    for _ in range(n_params):
        pi = int(torch.multinomial(sizes, 1, generator=gen))
        ei = int(torch.randint(params[pi].numel(), (1,), generator=gen))
        picks.append((pi, ei))
    auto = np.array([params[pi].grad.reshape(-1)[ei].item() for pi, ei in picks])
    numeric = np.empty(len(picks))
    with torch.no_grad():
        for k, (pi, ei) in enumerate(picks):
            flat = params[pi].view(-1)
            orig = flat[ei].item()
            flat[ei] = orig + step
            up = objective().item()
            flat[ei] = orig - step
            down = objective().item()
            flat[ei] = orig
            numeric[k] = (up - down) / (2 * step)
    module.zero_grad()
    module.train(was_training)
    denom = max(np.linalg.norm(auto), np.linalg.norm(numeric))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(auto - numeric) / denom)


def uncertainty_db(mae: float, magnitude: float) -> tuple[float, float]:
    """dB spread of a linear magnitude ``S`` under an absolute error ``L``."""
    if mae < 0:
        raise ValueError("absolute error must be non-negative")
    if magnitude <= mae:
        raise ValueError(f"lower bound undefined for S={magnitude} <= L={mae}")
    ratio = mae / magnitude
    return 20 * math.log10(1 + ratio), 20 * math.log10(1 - ratio)
