"""Coupled-resonator circuit model used as the ground-truth S-parameter source.

The filter is modeled as ``n`` synchronously tuned resonators with nearest
neighbour coupling. For each frequency the loaded resonator matrix

    A = lambda(f) I - j/Qu I - j diag(1/Qe_in, 0, ..., 0, 1/Qe_out) + K

is inverted and the two-port S-parameters read from its corner entries.
Geometry enters through the calibration in :class:`OracleConfig`: the
resonant frequency scales as ``1/L`` and couplings follow a cubic
small-aperture law in the opening width.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layout import DesignTemplate, N_IRIS

SPECTRUM_LEN = 168
N_FREQ = 28


@dataclass(frozen=True)
class FrequencyGrid:
    points: tuple[float, ...]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("frequency grid needs at least two points")
        if np.any(pts <= 0) or np.any(np.diff(pts) <= 0):
            raise ValueError("frequency grid must be positive and strictly increasing")
        object.__setattr__(self, "points", tuple(float(p) for p in pts))

    @classmethod
    def default(cls) -> "FrequencyGrid":
        return cls(tuple(26.5 + 0.5 * i for i in range(N_FREQ)))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.points)

    def __len__(self):
        return len(self.points)


DEFAULT_GRID = FrequencyGrid.default()


@dataclass(frozen=True)
class OracleConfig:
    """Calibration of the geometry -> circuit mapping."""

    kappa_ghz_mm: float = 92.4
    k_ref: float = 0.1
    q_ref: float = 10.0
    qu: float = 500.0
    cw_ref_mm: float = 2.0
    aperture_exponent: float = 3.0


DEFAULT_ORACLE = OracleConfig()


@dataclass(frozen=True)
class CircuitParams:
    n: int
    f0_res: float
    k: tuple[float, ...]
    qe_in: float
    qe_out: float
    qu: float = float("inf")

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(float(x) for x in self.k))
        if self.n < 1:
            raise ValueError("need at least one resonator")
        if len(self.k) != self.n - 1:
            raise ValueError(f"expected {self.n - 1} couplings, got {len(self.k)}")
        vals = [self.f0_res, self.qe_in, self.qe_out, *self.k]
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise ValueError("f0_res, couplings and external Q must be finite and positive")
        if not self.qu > 0:
            raise ValueError("unloaded Q must be positive (inf for lossless)")


@dataclass
class SMatrixSpectrum:
    """Complex S11, S21, S22 per frequency point; S12 equals S21."""

    freqs: np.ndarray
    s11: np.ndarray
    s21: np.ndarray
    s22: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def s12(self) -> np.ndarray:
        return self.s21

    def to_vector(self) -> np.ndarray:
        return pack_spectrum(self.s11, self.s21, self.s22)

    @classmethod
    def from_vector(cls, vec, grid: FrequencyGrid = DEFAULT_GRID) -> "SMatrixSpectrum":
        s11, s21, s22 = unpack_spectrum(vec)
        return cls(grid.array.copy(), s11, s21, s22)


def pack_spectrum(s11, s21, s22) -> np.ndarray:
    """Layout [Re S11, Im S11, Re S21, Im S21, Re S22, Im S22]."""
    return np.concatenate([s11.real, s11.imag, s21.real, s21.imag, s22.real, s22.imag])


def unpack_spectrum(vec):
    """Inverse of :func:`pack_spectrum`; accepts (..., 6F) arrays."""
    vec = np.asarray(vec)
    nf = vec.shape[-1] // 6
    blocks = [vec[..., i * nf:(i + 1) * nf] for i in range(6)]
    return (blocks[0] + 1j * blocks[1], blocks[2] + 1j * blocks[3],
            blocks[4] + 1j * blocks[5])


def map_template(t: DesignTemplate, cfg: OracleConfig = DEFAULT_ORACLE) -> CircuitParams:
    if not t.L > 0 or not np.isfinite(t.L):
        raise ValueError(f"resonator length must be positive, got {t.L}")
    used = np.asarray(t.cw[: t.N + 1], dtype=float)
    if len(used) != t.N + 1 or np.any(used <= 0):
        raise ValueError(f"coupling widths cw_0..cw_{t.N} must be positive, got {used.tolist()}")
    scale = used / cfg.cw_ref_mm
    p = cfg.aperture_exponent
    return CircuitParams(
        n=t.N,
        f0_res=cfg.kappa_ghz_mm / t.L,
        k=tuple(cfg.k_ref * scale[1:-1] ** p),
        qe_in=cfg.q_ref / scale[0] ** p,
        qe_out=cfg.q_ref / scale[-1] ** p,
        qu=cfg.qu,
    )


def solve_sparams(p: CircuitParams, grid: FrequencyGrid = DEFAULT_GRID) -> SMatrixSpectrum:
    f = grid.array
    n = p.n
    lam = f / p.f0_res - p.f0_res / f
    loss = 0.0 if np.isinf(p.qu) else 1.0 / p.qu
    a = np.zeros((f.size, n, n), dtype=complex)
    idx = np.arange(n)
    a[:, idx, idx] = (lam - 1j * loss)[:, None]
    a[:, 0, 0] -= 1j / p.qe_in
    a[:, n - 1, n - 1] -= 1j / p.qe_out
    if n > 1:
        k = np.asarray(p.k)
        a[:, idx[:-1], idx[1:]] = k
        a[:, idx[1:], idx[:-1]] = k
    # only the first and last columns of A^-1 are needed
    rhs = np.zeros((f.size, n, 2), dtype=complex)
    rhs[:, 0, 0] = 1.0
    rhs[:, n - 1, 1] = 1.0
    try:
        cols = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        for i in range(f.size):
            try:
                np.linalg.solve(a[i], rhs[i])
            except np.linalg.LinAlgError:
                raise np.linalg.LinAlgError(
                    f"singular resonator matrix at frequency index {i} ({f[i]} GHz)") from None
        raise
    inv_11 = cols[:, 0, 0]
    inv_n1 = cols[:, n - 1, 0]
    inv_nn = cols[:, n - 1, 1]
    s21 = 2j / np.sqrt(p.qe_in * p.qe_out) * inv_n1
    s11 = 1 + 2j / p.qe_in * inv_11
    s22 = 1 + 2j / p.qe_out * inv_nn
    out = SMatrixSpectrum(f.copy(), s11, s21, s22)
    for name in ("s11", "s21", "s22"):
        if not np.all(np.isfinite(getattr(out, name))):
            raise FloatingPointError(f"non-finite {name} in solved spectrum")
    return out


def oracle_label(t: DesignTemplate, grid: FrequencyGrid = DEFAULT_GRID,
                 cfg: OracleConfig = DEFAULT_ORACLE) -> np.ndarray:
    """Ground-truth 168-vector for one template."""
    return solve_sparams(map_template(t, cfg), grid).to_vector()


def oracle_label_batch(templates, grid: FrequencyGrid = DEFAULT_GRID,
                       cfg: OracleConfig = DEFAULT_ORACLE) -> np.ndarray:
    if isinstance(templates, np.ndarray):
        templates = [DesignTemplate.from_array(row) for row in templates]
    out = np.empty((len(templates), 6 * len(grid)))
    for i, t in enumerate(templates):
        out[i] = oracle_label(t, grid, cfg)
    return out


class OracleSimulator:
    """Simulator handle backed by the circuit model (template -> 168-vector)."""

    name = "oracle"

    def __init__(self, grid: FrequencyGrid = DEFAULT_GRID, cfg: OracleConfig = DEFAULT_ORACLE):
        self.grid = grid
        self.cfg = cfg

    def simulate(self, templates) -> np.ndarray:
        return oracle_label_batch(templates, self.grid, self.cfg)


__all__ = [
    "FrequencyGrid", "DEFAULT_GRID", "OracleConfig", "DEFAULT_ORACLE", "CircuitParams",
    "SMatrixSpectrum", "pack_spectrum", "unpack_spectrum", "map_template", "solve_sparams",
    "oracle_label", "oracle_label_batch", "OracleSimulator", "SPECTRUM_LEN", "N_IRIS",
]
