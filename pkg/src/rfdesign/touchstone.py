"""Minimal Touchstone v1 ``.s2p`` support (RI format, GHz, 50 ohm)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .oracle import SMatrixSpectrum


def format_s2p(spec: SMatrixSpectrum, comments: tuple[str, ...] = ()) -> str:
    lines = [f"! {c}" for c in comments]
    lines.append("# GHz S RI R 50")
    for i, f in enumerate(spec.freqs):
        s11, s21, s12, s22 = spec.s11[i], spec.s21[i], spec.s12[i], spec.s22[i]
        vals = [s11.real, s11.imag, s21.real, s21.imag, s12.real, s12.imag, s22.real, s22.imag]
        lines.append(f"{f:.6f} " + " ".join(f"{v:.12e}" for v in vals))
    return "\n".join(lines) + "\n"


def write_s2p(spec: SMatrixSpectrum, path, comments: tuple[str, ...] = ()) -> Path:
    path = Path(path)
    path.write_text(format_s2p(spec, comments))
    return path


def parse_s2p(text: str) -> SMatrixSpectrum:
    """Parse a two-port Touchstone v1 file in RI, MA or DB format.

    Frequencies are returned in GHz. Only the option line forms written by
    common tools are supported; the reference impedance is not used.
    """
    unit_scale = {"HZ": 1e-9, "KHZ": 1e-6, "MHZ": 1e-3, "GHZ": 1.0}
    scale, fmt = 1.0, "MA"
    numbers: list[float] = []
    for raw in text.splitlines():
        line = raw.split("!", 1)[0].strip()
        if not line:
            continue
        if line.startswith("#"):
            opts = line[1:].upper().split()
            for tok in opts:
                if tok in unit_scale:
                    scale = unit_scale[tok]
                elif tok in ("RI", "MA", "DB"):
                    fmt = tok
            if "S" not in opts:
                raise ValueError("only S-parameter Touchstone files are supported")
            continue
        numbers.extend(float(t) for t in line.split())
    if len(numbers) % 9:
        raise ValueError("two-port data must have 9 columns per frequency")
    data = np.array(numbers).reshape(-1, 9)
    freqs = data[:, 0] * scale
    pairs = data[:, 1:].reshape(-1, 4, 2)
    if fmt == "RI":
        s = pairs[..., 0] + 1j * pairs[..., 1]
    else:
        mag = pairs[..., 0] if fmt == "MA" else 10 ** (pairs[..., 0] / 20)
        s = mag * np.exp(1j * np.deg2rad(pairs[..., 1]))
    return SMatrixSpectrum(freqs, s[:, 0], s[:, 1], s[:, 3], extra={"s12": s[:, 2]})


def read_s2p(path) -> SMatrixSpectrum:
    return parse_s2p(Path(path).read_text())
