"""Design templates, action normalization and the via-footprint rasterizer.

A template ``(N, L, cw_0..cw_7)`` describes an iris-coupled SIW bandpass
filter: ``N`` resonators of length ``L`` separated by ``N + 1`` transverse via
walls whose centered openings have widths ``cw_0..cw_N``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

N_MIN, N_MAX = 2, 7
N_ORDERS = N_MAX - N_MIN + 1
N_IRIS = 8
L_RANGE = (2.0, 3.6)
CW_RANGE = (1.2, 2.6)
STEP_MM = 0.1

IMAGE_ROWS, IMAGE_COLS = 90, 584
PIXEL_MM = 0.05
VIA_RADIUS_PX = 4
SIDE_ROWS = (10, 80)
CENTER_ROW = 45
SIDE_PITCH_PX = 12
IRIS_PITCH_PX = 6
FEED_PX = 36

# number of continuous action dims: L plus eight coupling widths
N_CONTINUOUS = 1 + N_IRIS


def round_half_away(x):
    """Round to nearest integer, ties away from zero (scalar or array)."""
    if np.isscalar(x):
        return int(math.copysign(math.floor(abs(x) + 0.5), x))
    x = np.asarray(x, dtype=float)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(int)


def quantize_mm(x):
    """Snap a length in mm to the 0.1 mm design grid."""
    if np.isscalar(x):
        return round_half_away(x / STEP_MM) / 10.0
    return round_half_away(np.asarray(x) / STEP_MM) / 10.0


def _tenths(x: float) -> int:
    return round_half_away(x * 10.0)


@dataclass(frozen=True)
class DesignTemplate:
    """Filter layout parameters. Lengths in mm."""

    N: int
    L: float
    cw: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "L", float(self.L))
        cw = tuple(float(c) for c in self.cw)
        if len(cw) != N_IRIS:
            raise ValueError(f"expected {N_IRIS} coupling widths, got {len(cw)}")
        object.__setattr__(self, "cw", cw)

    def validate(self, extrapolate_cw: float | None = None) -> "DesignTemplate":
        """Check the template invariants; raise ValueError on violation.

        ``extrapolate_cw`` widens the upper cw bound (used for waveguide-like
        probes that deliberately leave the training range).
        """
        if not N_MIN <= self.N <= N_MAX:
            raise ValueError(f"N={self.N} outside {N_MIN}..{N_MAX}")
        if not L_RANGE[0] - 1e-9 <= self.L <= L_RANGE[1] + 1e-9:
            raise ValueError(f"L={self.L} mm outside {L_RANGE}")
        if abs(_tenths(self.L) - self.L * 10) > 1e-6:
            raise ValueError(f"L={self.L} mm not on the 0.1 mm grid")
        hi = CW_RANGE[1] if extrapolate_cw is None else extrapolate_cw
        for i, c in enumerate(self.cw):
            if i <= self.N:
                if not CW_RANGE[0] - 1e-9 <= c <= hi + 1e-9:
                    raise ValueError(f"cw_{i}={c} mm outside [{CW_RANGE[0]}, {hi}]")
                if abs(_tenths(c) - c * 10) > 1e-6:
                    raise ValueError(f"cw_{i}={c} mm not on the 0.1 mm grid")
            elif c != 0.0:
                raise ValueError(f"cw_{i} must be 0 for N={self.N}")
        return self

    @property
    def used_cw(self) -> tuple[float, ...]:
        return self.cw[: self.N + 1]

    def key(self) -> tuple[int, ...]:
        """Integer key on the 0.1 mm grid; equal keys mean equal layouts."""
        return (self.N, _tenths(self.L)) + tuple(_tenths(c) for c in self.used_cw)

    def to_array(self) -> np.ndarray:
        return np.array([self.N, self.L, *self.cw], dtype=float)

    @classmethod
    def from_array(cls, row) -> "DesignTemplate":
        row = np.asarray(row, dtype=float)
        n = int(round(row[0]))
        cw = [round(float(c), 1) if i <= n else 0.0 for i, c in enumerate(row[2:2 + N_IRIS])]
        return cls(n, round(float(row[1]), 1), tuple(cw))

    def to_json(self) -> dict:
        return {"N": self.N, "L_mm": self.L, "cw_mm": list(self.cw)}

    @classmethod
    def from_json(cls, obj) -> "DesignTemplate":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(int(obj["N"]), float(obj["L_mm"]), tuple(obj["cw_mm"]))


def make_template(n: int, length: float, cw) -> DesignTemplate:
    """Build a template from the used widths (or a scalar applied to all)."""
    if np.isscalar(cw):
        used = [float(cw)] * (n + 1)
    else:
        used = list(cw)[: n + 1]
    return DesignTemplate(n, length, tuple(used + [0.0] * (N_IRIS - len(used))))


def denormalize(n_raw, cont) -> DesignTemplate:
    """Map a normalized action to a quantized, legal template.

    ``n_raw`` is either a length-6 one-hot (or score vector; the argmax is
    used) or a scalar in (-1, 1) for the quantization baseline.
    """
    cont = np.clip(np.asarray(cont, dtype=float), -1.0, 1.0)
    if cont.shape != (N_CONTINUOUS,):
        raise ValueError(f"continuous action must have {N_CONTINUOUS} entries")
    if np.ndim(n_raw) == 0:
        n = N_MIN + round_half_away(2.5 * (float(n_raw) + 1.0))
    else:
        n = N_MIN + int(np.argmax(n_raw))
    n = min(max(n, N_MIN), N_MAX)
    length = min(max(quantize_mm(2.8 + 0.8 * cont[0]), L_RANGE[0]), L_RANGE[1])
    cw = [0.0] * N_IRIS
    for i in range(n + 1):
        cw[i] = min(max(quantize_mm(1.9 + 0.7 * cont[1 + i]), CW_RANGE[0]), CW_RANGE[1])
    return DesignTemplate(n, length, tuple(cw))


def denormalize_batch(n_index, cont) -> np.ndarray:
    """Vectorized :func:`denormalize` for categorical indices.

    Returns an ``(B, 10)`` template array (N, L, cw_0..cw_7).
    """
    n_index = np.asarray(n_index, dtype=int)
    cont = np.clip(np.asarray(cont, dtype=float), -1.0, 1.0)
    n = np.clip(N_MIN + n_index, N_MIN, N_MAX)
    length = np.clip(quantize_mm(2.8 + 0.8 * cont[:, 0]), *L_RANGE)
    cw = np.clip(quantize_mm(1.9 + 0.7 * cont[:, 1:]), *CW_RANGE)
    cw[np.arange(N_IRIS)[None, :] > n[:, None]] = 0.0
    return np.column_stack([n, length, cw]).astype(float)


def normalize(t: DesignTemplate) -> tuple[int, np.ndarray]:
    """Inverse of :func:`denormalize` on grid points: (order index, cont)."""
    cont = np.zeros(N_CONTINUOUS)
    cont[0] = (t.L - 2.8) / 0.8
    for i, c in enumerate(t.used_cw):
        cont[1 + i] = (c - 1.9) / 0.7
    return t.N - N_MIN, cont


# --------------------------------------------------------------------------
# rasterization

@lru_cache(maxsize=None)
def _disk() -> np.ndarray:
    r = VIA_RADIUS_PX
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (xx * xx + yy * yy) <= r * r


def via_centers(n: int, length_mm: float, cw_mm) -> list[tuple[int, int]]:
    """Via centers ``(row, col)`` in structure-local columns.

    The structure covers pixel columns ``[0, span)`` with
    ``span = n * L_px + 2 * FEED_PX``; ``cw_mm`` holds the ``n + 1`` used
    opening widths.
    """
    r = VIA_RADIUS_PX
    lpx = round_half_away(length_mm / PIXEL_MM)
    span = n * lpx + 2 * FEED_PX
    centers = []
    last = span - 1 - r
    xs = list(range(r, last + 1, SIDE_PITCH_PX))
    if xs[-1] != last:
        xs.append(last)
    for y in SIDE_ROWS:
        centers.extend((y, x) for x in xs)
    top_wall, bottom_wall = SIDE_ROWS
    for i, c in enumerate(cw_mm):
        x = FEED_PX + i * lpx
        w = round_half_away(c / PIXEL_MM)
        # free rows are [CENTER_ROW - w/2, CENTER_ROW + w/2)
        gap_lo = CENTER_ROW - w // 2
        gap_hi = gap_lo + w - 1
        inner_top = gap_lo - 1 - r
        inner_bottom = gap_hi + 1 + r
        y = top_wall
        while y < inner_top:
            centers.append((y, x))
            y += IRIS_PITCH_PX
        if inner_top > top_wall:
            centers.append((inner_top, x))
        y = bottom_wall
        while y > inner_bottom:
            centers.append((y, x))
            y -= IRIS_PITCH_PX
        if inner_bottom < bottom_wall:
            centers.append((inner_bottom, x))
    return centers


@lru_cache(maxsize=2048)
def _raster_key(key: tuple[int, ...]) -> bytes:
    n, l_tenths, *cw_tenths = key
    centers = via_centers(n, l_tenths / 10.0, [c / 10.0 for c in cw_tenths])
    r = VIA_RADIUS_PX
    cols = [x for _, x in centers]
    width = max(cols) - min(cols) + 2 * r + 1
    if width > IMAGE_COLS:
        raise AssertionError(f"structure width {width} px exceeds {IMAGE_COLS}")
    offset = (IMAGE_COLS - width) // 2 + r - min(cols)
    img = np.zeros((IMAGE_ROWS, IMAGE_COLS), dtype=np.uint8)
    disk = _disk()
    for y, x in centers:
        x += offset
        img[y - r:y + r + 1, x - r:x + r + 1] |= disk
    return img.tobytes()


def structure_length_px(t: DesignTemplate) -> int:
    """Pixel width of the structure including the feed extensions."""
    return t.N * round_half_away(t.L / PIXEL_MM) + 2 * FEED_PX


def rasterize(t: DesignTemplate) -> np.ndarray:
    """Render the via footprint as a 90x584 uint8 bitmap (1 = via)."""
    buf = _raster_key(t.key())
    return np.frombuffer(buf, dtype=np.uint8).reshape(IMAGE_ROWS, IMAGE_COLS).copy()


def rasterize_batch(templates, out: np.ndarray | None = None, dtype=np.float32) -> np.ndarray:
    """Render a sequence of templates (or a (B, 10) array) into (B, 90, 584)."""
    if isinstance(templates, np.ndarray):
        templates = [DesignTemplate.from_array(row) for row in templates]
    if out is None:
        out = np.empty((len(templates), IMAGE_ROWS, IMAGE_COLS), dtype=dtype)
    for i, t in enumerate(templates):
        out[i] = np.frombuffer(_raster_key(t.key()), dtype=np.uint8).reshape(IMAGE_ROWS, IMAGE_COLS)
    return out


def image_to_pgm(img: np.ndarray) -> bytes:
    """Plain (P2) PGM with maxval 1, one image row per line."""
    img = np.asarray(img)
    if img.shape != (IMAGE_ROWS, IMAGE_COLS):
        raise ValueError(f"image must be {IMAGE_ROWS}x{IMAGE_COLS}, got {img.shape}")
    lines = [f"P2\n{IMAGE_COLS} {IMAGE_ROWS}\n1\n"]
    lines.extend(" ".join("1" if v else "0" for v in row) + "\n" for row in img)
    return "".join(lines).encode("ascii")


def pgm_to_image(data: bytes) -> np.ndarray:
    """Parse a plain PGM produced by :func:`image_to_pgm`."""
    tokens = data.decode("ascii").split()
    if tokens[0] != "P2":
        raise ValueError("not a plain PGM (P2) file")
    cols, rows, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    values = np.array(tokens[4:], dtype=np.int64)
    if values.size != rows * cols:
        raise ValueError(f"expected {rows * cols} pixels, found {values.size}")
    if values.max(initial=0) > maxval:
        raise ValueError("pixel exceeds maxval")
    return values.reshape(rows, cols).astype(np.uint8)
