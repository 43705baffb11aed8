"""Command-line entry point: ``rfdesign <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import dataset
from .agent.trainer import HybridTQCAgent
from .designer import (ABLATION_FIELDS, ablate_sampling, design, generalization_probe,
                       intuition_probe_f0, intuition_probe_rejection, write_csv)
from .environment import TargetSpec, sample_specs
from .layout import image_to_pgm
from .oracle import OracleSimulator, SMatrixSpectrum
from .surrogate.analysis import scaling_ablation, train, uncertainty_db
from .surrogate.checkpoint import load_surrogate, save_surrogate
from .surrogate.estimator import SurrogateSimulator
from .surrogate.network import SurrogateConfig
from .touchstone import write_s2p

log = logging.getLogger("rfdesign")


def _read_json(arg: str | None) -> dict:
    """Accept inline JSON or a path to a JSON file."""
    if not arg:
        return {}
    p = Path(arg)
    text = p.read_text() if p.exists() else arg
    return json.loads(text)


def _dump(obj, path: str | None):
    text = json.dumps(obj, indent=2, default=float)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")
    print(text)


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _simulator(path: str):
    if path == "oracle":
        return OracleSimulator(), None
    model = load_surrogate(path)
    return SurrogateSimulator(model), model


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(a):
    t = time.perf_counter()
    corpus = dataset.generate(a.count, seed=a.seed)
    out = dataset.save(corpus, a.out)
    _dump({"path": str(out), "count": len(corpus), "seed": a.seed,
           "splits": {s: int(corpus.split_indices(s).size) for s in ("train", "val", "test")},
           "seconds": time.perf_counter() - t}, a.report)


def cmd_train_surrogate(a):
    cfg = SurrogateConfig.from_json(_read_json(a.config))
    overrides = {k: getattr(a, k) for k in ("epochs", "seed") if getattr(a, k) is not None}
    if overrides:
        cfg = SurrogateConfig(**{**cfg.__dict__, **overrides})
    corpus = dataset.load(a.corpus)
    t = time.perf_counter()
    model, report = train(cfg, corpus, train_size=a.train_size, verbose=1)
    out = Path(a.out)
    save_surrogate(model, out)
    if a.curve:
        write_csv(report.epochs, a.curve)
    _dump({"model": str(out), "seconds": time.perf_counter() - t, **report.to_json()},
          a.report)


def cmd_eval_surrogate(a):
    model = load_surrogate(a.model)
    corpus = dataset.load(a.corpus)
    idx = corpus.split_indices(a.split)
    mae = model.mae(corpus.templates[idx], corpus.spectra[idx])
    img = corpus.images(idx[:1])
    model.forward(img)  # warm-up
    reps = []
    for _ in range(5):
        t = time.perf_counter()
        model.forward(img)
        reps.append(time.perf_counter() - t)
    up1, lo1 = uncertainty_db(mae, 1.0)
    up01, lo01 = uncertainty_db(mae, 0.1) if mae < 0.1 else (float("nan"), float("nan"))
    _dump({"split": a.split, "count": int(idx.size), "mae": mae,
           "batch1_latency_s": float(np.median(reps)),
           "uncertainty_db": {"S=1.0": [up1, lo1], "S=0.1": [up01, lo01]}}, a.report)


def cmd_train_agent(a):
    params = _read_json(a.config)
    if a.samples is not None:
        params["total_samples"] = a.samples
    if a.seed is not None:
        params["seed"] = a.seed
    sim, _ = _simulator(a.surrogate)
    agent = HybridTQCAgent(verbose=1, **params)
    t = time.perf_counter()
    agent.fit(sim)
    out = Path(a.out)
    agent.save(out)
    curve = Path(a.curve) if a.curve else out.with_suffix(".curve.csv")
    agent.write_learning_curve(curve)
    _dump({"policy": str(out), "curve": str(curve), "seconds": time.perf_counter() - t,
           "samples": agent.samples_seen_, "diverged": agent.diverged_,
           "final_eval_reward": agent.learning_curve_[-1]["eval_reward"] if agent.learning_curve_ else None},
          a.report)


def cmd_design(a):
    spec = TargetSpec.from_json(_read_json(a.spec))
    policy = HybridTQCAgent.load(a.policy)
    surrogate = load_surrogate(a.surrogate)
    res = design(spec, policy, surrogate, a.k, a.seed, validate=not a.no_validate)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "design.pgm").write_bytes(image_to_pgm(res.image))
    write_s2p(SMatrixSpectrum.from_vector(res.model_spectrum), out / "model.s2p", ("surrogate prediction",))
    files = {"image": str(out / "design.pgm"), "model_s2p": str(out / "model.s2p")}
    if res.true_spectrum is not None:
        write_s2p(SMatrixSpectrum.from_vector(res.true_spectrum), out / "oracle.s2p", ("oracle",))
        files["oracle_s2p"] = str(out / "oracle.s2p")
    report = {**res.to_json(), "files": files}
    _dump(report, str(out / "design.json"))


def cmd_ablate_sampling(a):
    policy = HybridTQCAgent.load(a.policy)
    surrogate = load_surrogate(a.surrogate)
    specs = sample_specs(np.random.default_rng(a.spec_seed), a.specs)
    rows, _ = ablate_sampling(policy, surrogate, _int_list(a.budgets), specs,
                              seeds=range(a.seeds), validate=not a.no_validate)
    write_csv(rows, a.out, ABLATION_FIELDS)
    _dump(rows, a.report)


def cmd_ablate_scaling(a):
    cfg = SurrogateConfig.from_json(_read_json(a.config))
    corpus = dataset.load(a.corpus)
    curve = scaling_ablation(_int_list(a.sizes), cfg, corpus, verbose=1)
    rows = [{"size": s, "test_mae": m} for s, m in curve]
    write_csv(rows, a.out)
    _dump(rows, a.report)


def _strip(rows):
    return [{k: v for k, v in r.items() if k != "result"} for r in rows]


def cmd_probe_intuition(a):
    policy = HybridTQCAgent.load(a.policy)
    surrogate = load_surrogate(a.surrogate)
    f0 = intuition_probe_f0(policy, surrogate, k=a.k, seed=a.seed)
    rej = intuition_probe_rejection(policy, surrogate, k=a.k, seed=a.seed)
    _dump({"f0_probe": _strip(f0), "rejection_probe": _strip(rej)}, a.report)


def cmd_probe_generalization(a):
    surrogate = load_surrogate(a.surrogate)
    _dump(generalization_probe(surrogate), a.report)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rfdesign", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--report", help="also write the JSON report here")
        return sp

    sp = add("gen-data", cmd_gen_data, "generate an oracle-labelled corpus")
    sp.add_argument("--count", type=int, default=21000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("train-surrogate", cmd_train_surrogate, "train the CNN surrogate")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--config", help="SurrogateConfig JSON (inline or file)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--train-size", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--curve", help="per-epoch CSV")

    sp = add("eval-surrogate", cmd_eval_surrogate, "test MAE, dB uncertainty and latency")
    sp.add_argument("--model", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--split", default="test", choices=("train", "val", "test"))

    sp = add("train-agent", cmd_train_agent, "train the design policy")
    sp.add_argument("--surrogate", required=True, help="surrogate checkpoint or 'oracle'")
    sp.add_argument("--config", help="agent parameters JSON (inline or file)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--curve")
    sp.add_argument("--samples", type=int)
    sp.add_argument("--seed", type=int)

    sp = add("design", cmd_design, "design a filter for one spec")
    sp.add_argument("--spec", required=True, help="spec JSON (inline or file)")
    sp.add_argument("--k", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--no-validate", action="store_true")
    sp.add_argument("--policy", required=True)
    sp.add_argument("--surrogate", required=True)
    sp.add_argument("--out-dir", default="design_out")

    sp = add("ablate-sampling", cmd_ablate_sampling, "best-of-K reward and timing per budget")
    sp.add_argument("--policy", required=True)
    sp.add_argument("--surrogate", required=True)
    sp.add_argument("--budgets", default="1,10,100,1000")
    sp.add_argument("--specs", type=int, default=32)
    sp.add_argument("--seeds", type=int, default=5)
    sp.add_argument("--spec-seed", type=int, default=1234)
    sp.add_argument("--no-validate", action="store_true")
    sp.add_argument("--out", required=True, help="CSV path")

    sp = add("ablate-scaling", cmd_ablate_scaling, "test MAE versus training-set size")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--config")
    sp.add_argument("--sizes", default="1000,4000,16000")
    sp.add_argument("--out", required=True, help="CSV path")

    sp = add("probe-intuition", cmd_probe_intuition, "length-vs-f0 and order-vs-rejection probes")
    sp.add_argument("--policy", required=True)
    sp.add_argument("--surrogate", required=True)
    sp.add_argument("--k", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("probe-generalization", cmd_probe_generalization, "out-of-range opening widths")
    sp.add_argument("--surrogate", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    torch.set_num_threads(1)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
