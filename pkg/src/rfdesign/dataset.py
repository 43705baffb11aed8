"""Labeled template corpora: sampling, splitting and binary persistence.

On disk a corpus is two files::

    corpus.bin        16-byte header + count * 178 little-endian float32
    corpus.meta.json  metadata and the SHA-256 of corpus.bin

Each record is ``[N, L, cw_0..cw_7, spectrum(168)]``. Images are not stored;
they are re-rendered from templates by the deterministic rasterizer.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .layout import CW_RANGE, L_RANGE, N_IRIS, N_MAX, N_MIN, DesignTemplate, rasterize_batch
from .oracle import DEFAULT_GRID, DEFAULT_ORACLE, FrequencyGrid, OracleConfig, oracle_label

FORMAT_VERSION = 1
MAGIC = b"RFCORPUS"
HEADER = struct.Struct("<8sII")
TEMPLATE_WIDTH = 2 + N_IRIS
SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)

_L_GRID = np.round(np.arange(int(L_RANGE[0] * 10), int(L_RANGE[1] * 10) + 1) / 10, 1)
_CW_GRID = np.round(np.arange(int(CW_RANGE[0] * 10), int(CW_RANGE[1] * 10) + 1) / 10, 1)


class CorpusError(Exception):
    """Raised for unreadable, truncated or corrupted corpus files."""


def sample_template(rng: np.random.Generator) -> DesignTemplate:
    """Uniform draw over the discrete design grid."""
    n = int(rng.integers(N_MIN, N_MAX + 1))
    length = float(rng.choice(_L_GRID))
    cw = [float(c) for c in rng.choice(_CW_GRID, size=N_IRIS)]
    for i in range(n + 1, N_IRIS):
        cw[i] = 0.0
    return DesignTemplate(n, length, tuple(cw))


def template_for_index(seed: int, index: int) -> DesignTemplate:
    return sample_template(np.random.default_rng([seed, index]))


def split_of(seed: int, index: int, fractions=DEFAULT_FRACTIONS) -> str:
    """Split membership from a hash of (seed, index) only."""
    h = hashlib.blake2b(f"{seed}:{index}".encode(), digest_size=8).digest()
    u = int.from_bytes(h, "little") / 2.0 ** 64
    if u < fractions[0]:
        return "train"
    if u < fractions[0] + fractions[1]:
        return "val"
    return "test"


@dataclass
class Corpus:
    templates: np.ndarray          # (count, 10) float64, on the 0.1 mm grid
    spectra: np.ndarray            # (count, 168) float32
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.templates)

    def split_indices(self, name: str) -> np.ndarray:
        return np.asarray(self.meta["splits"][name], dtype=np.int64)

    def train_subset(self, size: int) -> np.ndarray:
        """First ``size`` train indices; subsets of increasing size are nested."""
        train = self.split_indices("train")
        if size > train.size:
            raise ValueError(f"requested {size} training examples, corpus has {train.size}")
        return train[:size]

    def template(self, i: int) -> DesignTemplate:
        return DesignTemplate.from_array(self.templates[i])

    def images(self, idx) -> np.ndarray:
        return rasterize_batch(self.templates[np.asarray(idx)])

    def __eq__(self, other):
        return (isinstance(other, Corpus) and self.meta == other.meta
                and np.array_equal(self.templates, other.templates)
                and np.array_equal(self.spectra, other.spectra))


def generate(count: int, seed: int = 0, grid: FrequencyGrid = DEFAULT_GRID,
             oracle: OracleConfig = DEFAULT_ORACLE, fractions=DEFAULT_FRACTIONS) -> Corpus:
    if count < 1:
        raise ValueError("count must be >= 1")
    templates = np.empty((count, TEMPLATE_WIDTH))
    spectra = np.empty((count, 6 * len(grid)), dtype=np.float32)
    splits = {name: [] for name in SPLITS}
    for i in range(count):
        t = template_for_index(seed, i)
        templates[i] = t.to_array()
        spectra[i] = oracle_label(t, grid, oracle)
        splits[split_of(seed, i, fractions)].append(i)
    meta = {
        "format_version": FORMAT_VERSION,
        "seed": int(seed),
        "count": int(count),
        "grid_ghz": list(grid.points),
        "oracle": asdict(oracle),
        "sampling": "uniform over N in 2..7, L and used cw on the 0.1 mm grid",
        "fractions": list(fractions),
        "split_counts": {k: len(v) for k, v in splits.items()},
        "splits": splits,
    }
    return Corpus(templates, spectra, meta)


def _records(c: Corpus) -> np.ndarray:
    rec = np.concatenate([c.templates.astype("<f4"), c.spectra.astype("<f4")], axis=1)
    return np.ascontiguousarray(rec, dtype="<f4")


def save(c: Corpus, path) -> Path:
    path = Path(path)
    meta_path = path.with_suffix(".meta.json")
    payload = HEADER.pack(MAGIC, FORMAT_VERSION, len(c)) + _records(c).tobytes()
    meta = dict(c.meta)
    meta["sha256"] = hashlib.sha256(payload).hexdigest()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
        meta_path.write_text(json.dumps(meta))
    except OSError as exc:
        raise CorpusError(f"cannot write corpus to {path}: {exc}") from exc
    return path


def load(path) -> Corpus:
    path = Path(path)
    meta_path = path.with_suffix(".meta.json")
    try:
        payload = path.read_bytes()
        meta = json.loads(meta_path.read_text())
    except OSError as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc
    if len(payload) < HEADER.size:
        raise CorpusError(f"{path}: truncated header")
    magic, version, count = HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise CorpusError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION or meta.get("format_version") != FORMAT_VERSION:
        raise CorpusError(f"{path}: format version {version} unsupported (want {FORMAT_VERSION})")
    width = TEMPLATE_WIDTH + 6 * len(meta["grid_ghz"])
    expected = HEADER.size + count * width * 4
    if len(payload) != expected:
        raise CorpusError(f"{path}: size {len(payload)} bytes, expected {expected} (truncated?)")
    digest = hashlib.sha256(payload).hexdigest()
    if digest != meta.pop("sha256", None):
        raise CorpusError(f"{path}: checksum mismatch")
    if count != meta["count"]:
        raise CorpusError(f"{path}: record count {count} disagrees with metadata {meta['count']}")
    rec = np.frombuffer(payload, dtype="<f4", offset=HEADER.size).reshape(count, width)
    templates = np.array([DesignTemplate.from_array(r).to_array() for r in rec[:, :TEMPLATE_WIDTH]])
    spectra = rec[:, TEMPLATE_WIDTH:].astype(np.float32)
    return Corpus(templates.reshape(count, TEMPLATE_WIDTH), spectra, meta)
