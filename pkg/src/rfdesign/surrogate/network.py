"""Residual CNN mapping a via-footprint bitmap to the 168-entry spectrum."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from ..layout import IMAGE_COLS, IMAGE_ROWS
from ..oracle import SPECTRUM_LEN


@dataclass
class SurrogateConfig:
    widths: tuple[int, ...] = (8, 16, 32, 64)
    blocks_per_stage: int = 2
    hidden: int = 256
    negative_slope: float = 0.01
    lr: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 64
    epochs: int = 60
    seed: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if not self.widths or self.blocks_per_stage < 1:
            raise ValueError("need at least one stage with one block")

    def to_json(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SurrogateConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "widths" in known:
            known["widths"] = tuple(known["widths"])
        return cls(**known)


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False),
                                          nn.BatchNorm2d(cout))

    def forward(self, x):
        y = F.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        skip = x if self.shortcut is None else self.shortcut(x)
        return F.relu(y + skip)


class MiniResNet(nn.Module):
    """ResNet-style trunk, global average pool, FC -> LReLU -> FC -> tanh."""

    def __init__(self, cfg: SurrogateConfig):
        super().__init__()
        w0 = cfg.widths[0]
        self.stem = nn.Sequential(
            nn.Conv2d(1, w0, 7, 2, 3, bias=False),
            nn.BatchNorm2d(w0),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, 2, 1),
        )
        stages = []
        cin = w0
        for s, width in enumerate(cfg.widths):
            for b in range(cfg.blocks_per_stage):
                stride = 2 if (b == 0 and s > 0) else 1
                stages.append(BasicBlock(cin, width, stride))
                cin = width
        self.stages = nn.Sequential(*stages)
        self.fc1 = nn.Linear(cin, cfg.hidden)
        self.fc2 = nn.Linear(cfg.hidden, SPECTRUM_LEN)
        self.negative_slope = cfg.negative_slope
        self._init(cfg.seed)

    def _init(self, seed: int):
        gen = torch.Generator().manual_seed(seed)
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = m.weight[0].numel()
                bound = (3.0 / fan_in) ** 0.5
                with torch.no_grad():
                    m.weight.uniform_(-bound, bound, generator=gen)
                    if m.bias is not None:
                        m.bias.zero_()

    def features(self, x):
        if x.dim() == 3:
            x = x.unsqueeze(1)
        if x.shape[-2:] != (IMAGE_ROWS, IMAGE_COLS):
            raise ValueError(f"expected {IMAGE_ROWS}x{IMAGE_COLS} images, got {tuple(x.shape[-2:])}")
        h = self.stages(self.stem(x))
        return h.mean(dim=(2, 3))

    def forward(self, x):
        h = self.features(x)
        h = F.leaky_relu(self.fc1(h), self.negative_slope)
        return torch.tanh(self.fc2(h))


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
