"""One-step design environment: target specs, measurements and reward.

All heavy paths are vectorized over a leading batch axis so the agent and the
test-time sampler can score thousands of candidates per call.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .layout import DesignTemplate, denormalize, denormalize_batch
from .oracle import DEFAULT_GRID, FrequencyGrid, unpack_spectrum

SPEC_FIELDS = ("f0", "fbw", "max_s21", "alpha_r", "alpha_l")
SPEC_JSON_KEYS = ("f0_ghz", "fbw", "max_s21_db", "alpha_r_db", "alpha_l_db")
SPEC_LOW = np.array([28.0, 0.02, -6.0, -60.0, -60.0])
SPEC_HIGH = np.array([39.0, 0.20, -1.0, -10.0, -10.0])

REWARD_WEIGHTS = {"f0": 0.3, "fbw": 0.3, "max_s21": 0.2, "alpha_l": 0.1, "alpha_r": 0.1}

DENSE_STEP_GHZ = 0.01
PASSBAND_DROP_DB = 3.0
MIN_PEAK_DB = -30.0
DB_FLOOR = -200.0


@dataclass(frozen=True)
class TargetSpec:
    f0: float
    fbw: float
    max_s21: float
    alpha_r: float
    alpha_l: float

    def validate(self) -> "TargetSpec":
        arr = self.to_array()
        bad = (arr < SPEC_LOW - 1e-9) | (arr > SPEC_HIGH + 1e-9)
        if bad.any():
            names = [SPEC_FIELDS[i] for i in np.flatnonzero(bad)]
            raise ValueError(f"spec fields out of range: {names}")
        return self

    def to_array(self) -> np.ndarray:
        return np.array([self.f0, self.fbw, self.max_s21, self.alpha_r, self.alpha_l], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "TargetSpec":
        return cls(*(float(x) for x in arr))

    def to_json(self) -> dict:
        return dict(zip(SPEC_JSON_KEYS, self.to_array().tolist()))

    @classmethod
    def from_json(cls, obj) -> "TargetSpec":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(*(float(obj[k]) for k in SPEC_JSON_KEYS))

    @property
    def f_left(self) -> float:
        return 0.95 * (1 - self.fbw / 2) * self.f0

    @property
    def f_right(self) -> float:
        return 1.05 * (1 + self.fbw / 2) * self.f0


@dataclass(frozen=True)
class Measurements:
    f0m: float
    fbwm: float
    max_s21m: float
    alpha_rm: float
    alpha_lm: float
    valid_passband: bool = True

    def to_array(self) -> np.ndarray:
        return np.array([self.f0m, self.fbwm, self.max_s21m, self.alpha_rm, self.alpha_lm])

    def to_json(self) -> dict:
        d = asdict(self)
        d["valid_passband"] = bool(self.valid_passband)
        return d


@dataclass(frozen=True)
class RewardBreakdown:
    r_f0: float
    r_fbw: float
    r_max_s21: float
    r_alpha_l: float
    r_alpha_r: float
    total: float

    def to_json(self) -> dict:
        return asdict(self)


def spec_frequencies(specs) -> tuple[np.ndarray, np.ndarray]:
    """Rejection evaluation frequencies (f_left, f_right) in GHz."""
    specs = np.atleast_2d(specs)
    f0, fbw = specs[:, 0], specs[:, 1]
    return 0.95 * (1 - fbw / 2) * f0, 1.05 * (1 + fbw / 2) * f0


def sample_specs(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` independent uniform specs as an (n, 5) array."""
    return rng.uniform(SPEC_LOW, SPEC_HIGH, size=(n, 5))


def sample_spec(rng: np.random.Generator) -> TargetSpec:
    return TargetSpec.from_array(sample_specs(rng, 1)[0])


def s21_db(spectra) -> np.ndarray:
    """|S21| in dB for (B, 168) spectra, floored at -200 dB."""
    _, s21, _ = unpack_spectrum(spectra)
    mag = np.abs(s21)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag)
    return np.maximum(db, DB_FLOOR)


class _DenseGrid:
    """Precomputed linear interpolation from the coarse grid to 0.01 GHz."""

    def __init__(self, grid: FrequencyGrid):
        f = grid.array
        n = int(round((f[-1] - f[0]) / DENSE_STEP_GHZ)) + 1
        self.f = f[0] + DENSE_STEP_GHZ * np.arange(n)
        self.f[-1] = f[-1]
        hi = np.clip(np.searchsorted(f, self.f, side="right"), 1, f.size - 1)
        self.i0 = hi - 1
        self.i1 = hi
        self.w = (self.f - f[self.i0]) / (f[self.i1] - f[self.i0])
        self.span = (f[0], f[-1])

    def interp(self, coarse: np.ndarray) -> np.ndarray:
        return coarse[:, self.i0] * (1 - self.w) + coarse[:, self.i1] * self.w


_DENSE_CACHE: dict[tuple, _DenseGrid] = {}


def _dense(grid: FrequencyGrid) -> _DenseGrid:
    d = _DENSE_CACHE.get(grid.points)
    if d is None:
        d = _DENSE_CACHE[grid.points] = _DenseGrid(grid)
    return d


def _interp_rows(x: np.ndarray, xp: np.ndarray, fp: np.ndarray) -> np.ndarray:
    """Row-wise linear interpolation of fp (B, n) at x (B,) on shared xp."""
    hi = np.clip(np.searchsorted(xp, x, side="right"), 1, xp.size - 1)
    lo = hi - 1
    w = (x - xp[lo]) / (xp[hi] - xp[lo])
    rows = np.arange(fp.shape[0])
    return fp[rows, lo] * (1 - w) + fp[rows, hi] * w


def measure_batch(specs, spectra, grid: FrequencyGrid = DEFAULT_GRID) -> dict[str, np.ndarray]:
    """Vectorized measurement extraction.

    Returns a dict of arrays ``f0m, fbwm, max_s21m, alpha_rm, alpha_lm,
    valid`` each of shape (B,).
    """
    specs = np.atleast_2d(np.asarray(specs, dtype=float))
    spectra = np.atleast_2d(np.asarray(spectra, dtype=float))
    if spectra.shape[1] != 6 * len(grid):
        raise ValueError(f"spectrum length {spectra.shape[1]} != {6 * len(grid)}")
    if not np.all(np.isfinite(spectra)):
        raise ValueError("non-finite spectrum entries")
    if specs.shape[0] != spectra.shape[0]:
        specs = np.broadcast_to(specs, (spectra.shape[0], 5))
    dense = _dense(grid)
    db = dense.interp(s21_db(spectra))
    b, n = db.shape
    rows = np.arange(b)
    peak_idx = db.argmax(axis=1)
    peak = db[rows, peak_idx]
    thr = peak - PASSBAND_DROP_DB
    below = db < thr[:, None]
    idx = np.arange(n)[None, :]
    left = np.where(below & (idx < peak_idx[:, None]), idx, -1).max(axis=1)
    right = np.where(below & (idx > peak_idx[:, None]), idx, n).min(axis=1)
    touch_lo = left < 0
    touch_hi = right >= n
    f = dense.f

    lo_a = np.clip(left, 0, n - 2)
    d_a, d_b = db[rows, lo_a], db[rows, lo_a + 1]
    f_lo = f[lo_a] + (thr - d_a) / np.where(d_b != d_a, d_b - d_a, 1.0) * (f[lo_a + 1] - f[lo_a])
    f_lo = np.where(touch_lo, f[0], f_lo)

    hi_b = np.clip(right, 1, n - 1)
    d_a, d_b = db[rows, hi_b - 1], db[rows, hi_b]
    f_hi = f[hi_b - 1] + (thr - d_a) / np.where(d_b != d_a, d_b - d_a, 1.0) * (f[hi_b] - f[hi_b - 1])
    f_hi = np.where(touch_hi, f[-1], f_hi)

    f0m = 0.5 * (f_lo + f_hi)
    valid = ~(touch_lo & touch_hi) & (peak >= MIN_PEAK_DB)
    fbwm = np.where(valid, (f_hi - f_lo) / f0m, 0.0)

    f_l, f_r = spec_frequencies(specs)
    f_l = np.clip(f_l, *dense.span)
    f_r = np.clip(f_r, *dense.span)
    alpha_lm = _interp_rows(f_l, f, db)
    alpha_rm = _interp_rows(f_r, f, db)
    return {"f0m": f0m, "fbwm": fbwm, "max_s21m": peak, "alpha_rm": alpha_rm,
            "alpha_lm": alpha_lm, "valid": valid}


def measure(spec: TargetSpec, spectrum, grid: FrequencyGrid = DEFAULT_GRID) -> Measurements:
    m = measure_batch(spec.to_array()[None], np.asarray(spectrum)[None], grid)
    return Measurements(float(m["f0m"][0]), float(m["fbwm"][0]), float(m["max_s21m"][0]),
                        float(m["alpha_rm"][0]), float(m["alpha_lm"][0]), bool(m["valid"][0]))


def reward_batch(specs, meas: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Sub-rewards and weighted total for batched specs and measurements."""
    specs = np.atleast_2d(np.asarray(specs, dtype=float))
    f0, fbw, max_s21, alpha_r, alpha_l = specs.T
    f0m, fbwm = meas["f0m"], meas["fbwm"]
    r_f0 = (np.minimum(f0, f0m) / np.maximum(f0, f0m)) ** 5
    r_fbw = (np.minimum(fbw, fbwm) / np.maximum(fbw, fbwm)) ** 3
    with np.errstate(divide="ignore", invalid="ignore"):
        r_max = np.where(meas["max_s21m"] > max_s21, 1.0, max_s21 / meas["max_s21m"])
        r_ar = np.where(meas["alpha_rm"] < alpha_r, 1.0, meas["alpha_rm"] / alpha_r)
        r_al = np.where(meas["alpha_lm"] < alpha_l, 1.0, meas["alpha_lm"] / alpha_l)
    # a measured level at or above 0 dB would flip the ratio's sign
    r_max, r_ar, r_al = (np.clip(np.nan_to_num(r, nan=0.0), 0.0, 1.0) for r in (r_max, r_ar, r_al))
    total = (REWARD_WEIGHTS["f0"] * r_f0 + REWARD_WEIGHTS["fbw"] * r_fbw
             + REWARD_WEIGHTS["max_s21"] * r_max + REWARD_WEIGHTS["alpha_l"] * r_al
             + REWARD_WEIGHTS["alpha_r"] * r_ar)
    return {"r_f0": r_f0, "r_fbw": r_fbw, "r_max_s21": r_max, "r_alpha_l": r_al,
            "r_alpha_r": r_ar, "total": total}


def reward(spec: TargetSpec, m: Measurements) -> RewardBreakdown:
    meas = {"f0m": np.array([m.f0m]), "fbwm": np.array([m.fbwm]),
            "max_s21m": np.array([m.max_s21m]), "alpha_rm": np.array([m.alpha_rm]),
            "alpha_lm": np.array([m.alpha_lm])}
    r = reward_batch(spec.to_array()[None], meas)
    return RewardBreakdown(*(float(r[k][0]) for k in
                             ("r_f0", "r_fbw", "r_max_s21", "r_alpha_l", "r_alpha_r", "total")))


def evaluate_templates(specs, templates, sim, grid: FrequencyGrid = DEFAULT_GRID):
    """Simulate (B, 10) templates and score them against (B, 5) specs."""
    spectra = sim.simulate(templates)
    meas = measure_batch(specs, spectra, grid)
    return reward_batch(specs, meas), meas, spectra


def step(spec: TargetSpec, n_raw, cont, sim, grid: FrequencyGrid = DEFAULT_GRID):
    """Run one episode: action -> template -> spectrum -> measurement -> reward."""
    t = denormalize(n_raw, cont)
    spectrum = sim.simulate(t.to_array()[None])[0]
    m = measure(spec, spectrum, grid)
    return reward(spec, m), m, t


def step_batch(specs, n_index, cont, sim, grid: FrequencyGrid = DEFAULT_GRID):
    """Batched :func:`step` for categorical actions; returns (rewards, meas, templates)."""
    templates = denormalize_batch(n_index, cont)
    r, meas, _ = evaluate_templates(specs, templates, sim, grid)
    return r, meas, templates


def report(spec: TargetSpec, m: Measurements, r: RewardBreakdown) -> dict:
    """Row mirroring the design table columns: s, s_m, R."""
    return {"spec": spec.to_json(), "measured": m.to_json(), "reward": r.to_json(),
            "s": spec.to_array().round(4).tolist(),
            "s_m": [round(m.f0m, 3), round(m.fbwm, 4), round(m.max_s21m, 3),
                    round(m.alpha_rm, 3), round(m.alpha_lm, 3)],
            "R": round(r.total, 4)}
