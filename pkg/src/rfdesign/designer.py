"""Amortized design with best-of-K test-time sampling, probes and ablations."""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .environment import (Measurements, RewardBreakdown, TargetSpec, measure_batch, reward_batch,
                          s21_db)
from .layout import DesignTemplate, make_template, rasterize, rasterize_batch
from .oracle import DEFAULT_GRID, FrequencyGrid, OracleSimulator, oracle_label_batch
from .surrogate.estimator import DEFAULT_MEMORY_BUDGET, SurrogateRegressor
from .validation import check_specs

STAGE_NAMES = ("Policy Inference", "Build Images", "Neural-sim Forward", "Interp")
ABLATION_FIELDS = ("budget", "mean_model_R", "mean_true_R", "t_policy", "t_images", "t_forward",
                   "t_interp")


@dataclass
class TimingReport:
    policy_inference: float = 0.0
    build_images: float = 0.0
    neural_sim_forward: float = 0.0
    interp: float = 0.0
    total: float = 0.0

    def to_json(self) -> dict:
        vals = (self.policy_inference, self.build_images, self.neural_sim_forward, self.interp)
        out = dict(zip(STAGE_NAMES, vals))
        out["Total"] = self.total
        return out

    def __iadd__(self, other: "TimingReport"):
        for k, v in asdict(other).items():
            setattr(self, k, getattr(self, k) + v)
        return self


class CandidateError(RuntimeError):
    """Simulator failure attributed to a specific candidate."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"candidate {index}: {cause}")
        self.index = index


@dataclass
class DesignResult:
    spec: TargetSpec
    template: DesignTemplate
    winner_index: int
    k: int
    seed: int
    model_spectrum: np.ndarray
    model_measurements: Measurements
    model_reward: RewardBreakdown
    timings: TimingReport
    true_spectrum: np.ndarray | None = None
    true_measurements: Measurements | None = None
    true_reward: RewardBreakdown | None = None
    candidate_rewards: np.ndarray | None = field(default=None, repr=False)

    @property
    def image(self) -> np.ndarray:
        return rasterize(self.template)

    @property
    def validation_gap(self) -> float | None:
        if self.true_reward is None:
            return None
        return abs(self.model_reward.total - self.true_reward.total)

    def to_json(self) -> dict:
        out = {"spec": self.spec.to_json(), "template": self.template.to_json(),
               "winner_index": self.winner_index, "k": self.k, "seed": self.seed,
               "model": {"measurements": self.model_measurements.to_json(),
                         "reward": self.model_reward.to_json()},
               "timings": self.timings.to_json()}
        if self.true_reward is not None:
            out["oracle"] = {"measurements": self.true_measurements.to_json(),
                             "reward": self.true_reward.to_json()}
            out["validation_gap"] = self.validation_gap
        return out


def _row_measurements(meas: dict, i: int) -> Measurements:
    return Measurements(float(meas["f0m"][i]), float(meas["fbwm"][i]), float(meas["max_s21m"][i]),
                        float(meas["alpha_rm"][i]), float(meas["alpha_lm"][i]), bool(meas["valid"][i]))


def _row_reward(rew: dict, i: int) -> RewardBreakdown:
    return RewardBreakdown(*(float(rew[k][i]) for k in
                             ("r_f0", "r_fbw", "r_max_s21", "r_alpha_l", "r_alpha_r", "total")))


def simulate_timed(surrogate, templates: np.ndarray, timings: TimingReport,
                   memory_budget: int = DEFAULT_MEMORY_BUDGET) -> np.ndarray:
    """Predict spectra for unique templates, charging image building and the
    network forward to separate timers.

    ``surrogate`` may also be any object with ``simulate`` (e.g. the oracle);
    its whole cost is then charged to the forward stage.
    """
    if not isinstance(surrogate, SurrogateRegressor):
        t = time.perf_counter()
        out = np.asarray(surrogate.simulate(templates), dtype=np.float64)
        timings.neural_sim_forward += time.perf_counter() - t
        return out
    bs = surrogate._batch_size_for(memory_budget)
    out = np.empty((len(templates), 168))
    for s in range(0, len(templates), bs):
        t = time.perf_counter()
        images = rasterize_batch(templates[s:s + bs])
        timings.build_images += time.perf_counter() - t
        t = time.perf_counter()
        try:
            out[s:s + bs] = surrogate.forward(images)
        except Exception as exc:
            raise CandidateError(s, exc) from exc
        timings.neural_sim_forward += time.perf_counter() - t
    return out


def design(spec, policy, surrogate, k: int = 1000, seed: int = 0, validate: bool = True,
           oracle=None, grid: FrequencyGrid = DEFAULT_GRID, keep_candidates: bool = False,
           memory_budget: int = DEFAULT_MEMORY_BUDGET) -> DesignResult:
    """Sample ``k`` designs from the policy and keep the best by virtual reward.

    Ties go to the lowest candidate index. With ``validate`` the winner is
    re-simulated by ``oracle`` (the analytical oracle by default).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    spec = spec if isinstance(spec, TargetSpec) else TargetSpec.from_array(check_specs(spec)[0])
    spec.validate()
    timings = TimingReport()
    t_start = time.perf_counter()

    t = time.perf_counter()
    templates, _, _ = policy.sample_candidates(spec.to_array(), k, seed)
    timings.policy_inference = time.perf_counter() - t

    keys = np.round(templates * 10).astype(np.int64)
    uniq, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    # keep unique rows in order of first appearance so the work order is stable
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    uniq_templates = templates[first[order]]
    pred = simulate_timed(surrogate, uniq_templates, timings, memory_budget)

    t = time.perf_counter()
    specs = np.repeat(spec.to_array()[None], len(uniq_templates), axis=0)
    meas = measure_batch(specs, pred, grid)
    rew = reward_batch(specs, meas)
    cand_rewards = rew["total"][rank[inverse]]
    winner = int(np.argmax(cand_rewards))  # first maximum wins ties
    timings.interp = time.perf_counter() - t

    u = rank[inverse[winner]]
    result = DesignResult(spec, DesignTemplate.from_array(templates[winner]), winner, k, seed,
                          pred[u], _row_measurements(meas, u), _row_reward(rew, u), timings,
                          candidate_rewards=cand_rewards if keep_candidates else None)
    timings.total = time.perf_counter() - t_start
    if validate:
        validate_result(result, oracle, grid)
    return result


def validate_result(result: DesignResult, oracle=None, grid: FrequencyGrid = DEFAULT_GRID):
    """Attach oracle spectrum, measurements and reward to ``result``."""
    oracle = OracleSimulator(grid) if oracle is None else oracle
    try:
        true = np.asarray(oracle.simulate(result.template.to_array()[None]))
    except Exception as exc:
        raise CandidateError(result.winner_index, exc) from exc
    spec = result.spec.to_array()[None]
    meas = measure_batch(spec, true, grid)
    rew = reward_batch(spec, meas)
    result.true_spectrum = true[0]
    result.true_measurements = _row_measurements(meas, 0)
    result.true_reward = _row_reward(rew, 0)
    return result


def ablate_sampling(policy, surrogate, budgets, specs, seeds=(0,), validate: bool = True,
                    oracle=None) -> tuple[list[dict], list[TimingReport]]:
    """Mean virtual/true best-of-K reward and mean stage timings per budget."""
    budgets = list(budgets)
    if not budgets or any(b < 1 for b in budgets) or budgets != sorted(budgets):
        raise ValueError("budgets must be nonempty, positive and ascending")
    specs = check_specs(specs)
    rows, reports = [], []
    for k in budgets:
        model_r, true_r, timing = [], [], TimingReport()
        for seed in seeds:
            for i, spec in enumerate(specs):
                res = design(spec, policy, surrogate, k, seed=seed * 100_003 + i, validate=validate,
                             oracle=oracle)
                model_r.append(res.model_reward.total)
                if res.true_reward is not None:
                    true_r.append(res.true_reward.total)
                timing += res.timings
        n = len(model_r)
        mean_timing = TimingReport(*(v / n for v in asdict(timing).values()))
        rows.append({"budget": k, "mean_model_R": float(np.mean(model_r)),
                     "mean_true_R": float(np.mean(true_r)) if true_r else float("nan"),
                     "t_policy": mean_timing.policy_inference, "t_images": mean_timing.build_images,
                     "t_forward": mean_timing.neural_sim_forward, "t_interp": mean_timing.interp})
        reports.append(mean_timing)
    return rows, reports


def write_csv(rows: list[dict], path, fields=None) -> Path:
    path = Path(path)
    fields = list(fields or rows[0].keys())
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fields})
    return path


PROBE_F0_COMPANION = {"fbw": 0.07, "max_s21": -3.0, "alpha_r": -20.0, "alpha_l": -10.0}
PROBE_F0_VALUES = (30.0, 31.0, 33.0, 35.0)
PROBE_REJECTION_COMPANION = {"f0": 33.0, "fbw": 0.15, "max_s21": -1.0}
PROBE_ALPHA_VALUES = (-15.0, -20.0, -30.0)


def intuition_probe_f0(policy, surrogate, f0_list=PROBE_F0_VALUES, k: int = 1000, seed: int = 0,
                       oracle=None) -> list[dict]:
    """Winning resonator length for each centre frequency."""
    out = []
    for f0 in f0_list:
        spec = TargetSpec(f0=float(f0), **PROBE_F0_COMPANION)
        res = design(spec, policy, surrogate, k, seed, oracle=oracle)
        out.append({"f0": float(f0), "L": res.template.L, "N": res.template.N,
                    "f0m_true": res.true_measurements.f0m, "true_R": res.true_reward.total,
                    "model_R": res.model_reward.total, "result": res})
    return out


def intuition_probe_rejection(policy, surrogate, alpha_list=PROBE_ALPHA_VALUES, k: int = 1000,
                              seed: int = 0, oracle=None) -> list[dict]:
    """Winning filter order for each right-side rejection level (left = right + 5 dB)."""
    out = []
    for a_r in alpha_list:
        spec = TargetSpec(alpha_r=float(a_r), alpha_l=float(a_r) + 5.0, **PROBE_REJECTION_COMPANION)
        res = design(spec, policy, surrogate, k, seed, oracle=oracle)
        out.append({"alpha_r": float(a_r), "N": res.template.N, "L": res.template.L,
                    "true_R": res.true_reward.total, "model_R": res.model_reward.total,
                    "result": res})
    return out


def s21_at(spectrum, freq: float, grid: FrequencyGrid = DEFAULT_GRID) -> float:
    """|S21| in dB linearly interpolated at ``freq`` GHz."""
    return float(np.interp(freq, grid.array, s21_db(np.asarray(spectrum)[None])[0]))


GENERALIZATION_CW = 2.7


def waveguide_templates(lengths=(2.7, 2.8, 2.9), orders=(2, 4, 6), cw: float = GENERALIZATION_CW):
    """Templates whose irises are all opened to ``cw`` (beyond the trained range)."""
    return [make_template(n, length, cw).validate(extrapolate_cw=cw) for length in lengths for n in orders]


def generalization_probe(surrogate, lengths=(2.7, 2.8, 2.9), orders=(2, 4, 6),
                         cw: float = GENERALIZATION_CW, grid: FrequencyGrid = DEFAULT_GRID) -> dict:
    """Surrogate vs oracle S21 (dB) on out-of-range opening widths.

    Error is averaged over grid points where the oracle has |S21| >= 0.1.
    """
    templates = waveguide_templates(lengths, orders, cw)
    arr = np.stack([t.to_array() for t in templates])
    true = oracle_label_batch(templates, grid)
    pred = surrogate.predict(rasterize_batch(templates))
    true_db, pred_db = s21_db(true), s21_db(pred)
    mag = np.abs(true[:, 56:84] + 1j * true[:, 84:112])
    mask = mag >= 0.1
    per = []
    for i, t in enumerate(templates):
        m = mask[i]
        err = float(np.abs(pred_db[i, m] - true_db[i, m]).mean()) if m.any() else float("nan")
        per.append({"N": t.N, "L": t.L, "length_px": int(t.N * round(t.L / 0.05)),
                    "mean_abs_err_db": err, "inband_fraction": float((true_db[i] > -3).mean())})
    all_err = np.abs(pred_db - true_db)[mask]
    return {"cw": cw, "templates": arr.tolist(), "per_template": per,
            "mean_abs_err_db": float(all_err.mean()),
            "oracle_inband_fraction": float((true_db > -3).mean())}
