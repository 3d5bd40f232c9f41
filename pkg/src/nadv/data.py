"""Dataset construction and ingestion.

All model-facing data lives in [-1, 1] per coordinate; each Dataset carries
the per-coordinate raw-space bounds used for that mapping so instances can
be reported in their original units.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import checkpoint
from .errors import (CountMismatchError, DimensionError, FormatError,
                     TruncatedError)

SWISS_T_MIN = 1.5 * np.pi
SWISS_T_MAX = 4.5 * np.pi
_SWISS_SCALE = 0.9 / SWISS_T_MAX


@dataclass
class Dataset:
    """Rows of normalized instances plus the mapping back to raw units.

    x is [n, m] float64 in [-1, 1]; norm_lo/norm_hi are the raw-space
    per-coordinate bounds behind that mapping. A coordinate with
    norm_hi == norm_lo is constant; it normalizes to 0 and denormalizes to
    norm_lo.
    """

    x: np.ndarray
    norm_lo: np.ndarray
    norm_hi: np.ndarray
    y: np.ndarray | None = None
    provenance: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.norm_lo = np.asarray(self.norm_lo, dtype=np.float64)
        self.norm_hi = np.asarray(self.norm_hi, dtype=np.float64)
        if self.x.ndim != 2:
            raise DimensionError(f"x must be 2-D, got shape {self.x.shape}")
        m = self.x.shape[1]
        if self.norm_lo.shape != (m,) or self.norm_hi.shape != (m,):
            raise DimensionError(
                f"normalization bounds must have shape ({m},), got "
                f"{self.norm_lo.shape} and {self.norm_hi.shape}"
            )
        if np.any(self.norm_hi < self.norm_lo):
            raise DimensionError("norm_hi must be >= norm_lo per coordinate")
        if self.x.size and (self.x.min() < -1.0 - 1e-9
                            or self.x.max() > 1.0 + 1e-9):
            raise DimensionError("normalized values must lie in [-1, 1]")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape != (self.x.shape[0],):
                raise DimensionError(
                    f"labels shape {self.y.shape} does not match "
                    f"{self.x.shape[0]} rows"
                )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        span = self.norm_hi - self.norm_lo
        safe = np.where(span == 0.0, 1.0, span)
        q = 2.0 * (raw - self.norm_lo) / safe - 1.0
        return np.where(span == 0.0, 0.0, q)

    def denormalize(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        span = self.norm_hi - self.norm_lo
        return self.norm_lo + (q + 1.0) * 0.5 * span


def _normalize_raw(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lo = raw.min(axis=0)
    hi = raw.max(axis=0)
    span = hi - lo
    safe = np.where(span == 0.0, 1.0, span)
    x = np.where(span == 0.0, 0.0, 2.0 * (raw - lo) / safe - 1.0)
    return x, lo, hi


def swiss_roll_curve(t: np.ndarray) -> np.ndarray:
    """Noise-free spiral points for parameter values t, raw coordinates."""
    t = np.asarray(t, dtype=np.float64)
    return _SWISS_SCALE * np.stack([t * np.cos(t), t * np.sin(t)], axis=-1)


def gen_swiss_roll(n: int, noise_sigma: float = 0.05, seed: int = 0) -> Dataset:
    """Points on a two-turn spiral with isotropic Gaussian jitter."""
    if n < 1:
        raise DimensionError(f"n must be >= 1, got {n}")
    if noise_sigma < 0:
        raise DimensionError(f"noise_sigma must be >= 0, got {noise_sigma}")
    rng = np.random.default_rng(seed)
    t = rng.uniform(SWISS_T_MIN, SWISS_T_MAX, n)
    raw = swiss_roll_curve(t) + noise_sigma * rng.normal(size=(n, 2))
    x, lo, hi = _normalize_raw(raw)
    return Dataset(x, lo, hi,
                   provenance=f"swiss-roll(n={n},sigma={noise_sigma},seed={seed})")


def swiss_roll_distance(raw_points: np.ndarray) -> np.ndarray:
    """Euclidean distance from raw-space points to the noise-free spiral.

    Coarse grid to bracket the nearest parameter, then a bounded scalar
    minimization per point.
    """
    pts = np.atleast_2d(np.asarray(raw_points, dtype=np.float64))
    if pts.shape[1] != 2:
        raise DimensionError(f"expected 2-D points, got shape {pts.shape}")
    ts = np.linspace(SWISS_T_MIN, SWISS_T_MAX, 2049)
    curve = swiss_roll_curve(ts)
    d2 = ((pts[:, None, :] - curve[None, :, :]) ** 2).sum(axis=2)
    nearest = d2.argmin(axis=1)
    out = np.empty(pts.shape[0])
    for i, j in enumerate(nearest):
        a = ts[max(j - 1, 0)]
        b = ts[min(j + 1, len(ts) - 1)]
        p = pts[i]

        def dist2(t):
            c = swiss_roll_curve(np.array([t]))[0]
            return (c[0] - p[0]) ** 2 + (c[1] - p[1]) ** 2

        res = minimize_scalar(dist2, bounds=(a, b), method="bounded",
                              options={"xatol": 1e-12})
        out[i] = np.sqrt(min(res.fun, d2[i, j]))
    return out


def gen_blobs(n: int, centers: int = 3, sigma: float = 0.1,
              seed: int = 0) -> Dataset:
    """Equal-sized Gaussian clusters around centers spaced on a circle;
    label = center index."""
    if centers < 2:
        raise DimensionError(f"need at least 2 centers, got {centers}")
    if n < centers:
        raise DimensionError(f"need n >= centers, got n={n} centers={centers}")
    if sigma < 0:
        raise DimensionError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(centers) / centers
    locs = 0.75 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    counts = np.full(centers, n // centers)
    counts[: n % centers] += 1
    labels = np.repeat(np.arange(centers), counts)
    raw = locs[labels] + sigma * rng.normal(size=(n, 2))
    order = rng.permutation(n)
    raw, labels = raw[order], labels[order]
    x, lo, hi = _normalize_raw(raw)
    return Dataset(x, lo, hi, y=labels,
                   provenance=f"blobs(n={n},centers={centers},sigma={sigma},seed={seed})")


_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def _read_exact(buf: bytes, offset: int, count: int, what: str,
                path: str) -> bytes:
    if len(buf) < offset + count:
        raise TruncatedError(
            f"{path}: expected {offset + count} bytes for {what}, "
            f"file has {len(buf)}"
        )
    return buf[offset:offset + count]


def _load_idx_images(path: str) -> np.ndarray:
    buf = open(path, "rb").read()
    magic, = struct.unpack(">I", _read_exact(buf, 0, 4, "magic", path))
    if magic != _IDX_IMAGES_MAGIC:
        raise FormatError(
            f"{path}: bad image magic 0x{magic:08x} at offset 0, "
            f"expected 0x{_IDX_IMAGES_MAGIC:08x}"
        )
    count, rows, cols = struct.unpack(
        ">III", _read_exact(buf, 4, 12, "image header", path))
    payload = _read_exact(buf, 16, count * rows * cols, "image payload", path)
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    return pixels.reshape(count, rows * cols)


def _load_idx_labels(path: str) -> np.ndarray:
    buf = open(path, "rb").read()
    magic, = struct.unpack(">I", _read_exact(buf, 0, 4, "magic", path))
    if magic != _IDX_LABELS_MAGIC:
        raise FormatError(
            f"{path}: bad label magic 0x{magic:08x} at offset 0, "
            f"expected 0x{_IDX_LABELS_MAGIC:08x}"
        )
    count, = struct.unpack(">I", _read_exact(buf, 4, 4, "label header", path))
    payload = _read_exact(buf, 8, count, "label payload", path)
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def load_idx(images_path: str, labels_path: str | None = None) -> Dataset:
    """Read big-endian IDX image (and optional label) files; pixels 0..255
    map to [-1, 1]."""
    pixels = _load_idx_images(images_path)
    y = None
    prov = f"idx({images_path})"
    if labels_path is not None:
        y = _load_idx_labels(labels_path)
        if y.shape[0] != pixels.shape[0]:
            raise CountMismatchError(
                f"{images_path} holds {pixels.shape[0]} images but "
                f"{labels_path} holds {y.shape[0]} labels"
            )
        prov = f"idx({images_path},{labels_path})"
    m = pixels.shape[1]
    x = pixels / 127.5 - 1.0
    return Dataset(x, np.zeros(m), np.full(m, 255.0), y=y, provenance=prov)


def downsample(images: np.ndarray, rows: int, cols: int, factor: int,
               pad_to: int | None = None) -> np.ndarray:
    """Block-mean pooling; pad_to first grows the image to pad_to x pad_to
    with -1.0 (background) split evenly around it (extra on bottom/right).

    The padded dims must be divisible by factor. 28x28 digits reach 8x8
    via pad_to=32, factor=4, which equals two factor-2 poolings.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 2 or images.shape[1] != rows * cols:
        raise DimensionError(
            f"images shape {images.shape} does not match rows*cols = "
            f"{rows}*{cols}"
        )
    if factor < 1:
        raise DimensionError(f"factor must be >= 1, got {factor}")
    grid = images.reshape(-1, rows, cols)
    if pad_to is not None:
        if pad_to < max(rows, cols):
            raise DimensionError(
                f"pad_to={pad_to} is smaller than the image ({rows}x{cols})"
            )
        pad_r, pad_c = pad_to - rows, pad_to - cols
        grid = np.pad(grid,
                      ((0, 0),
                       (pad_r // 2, pad_r - pad_r // 2),
                       (pad_c // 2, pad_c - pad_c // 2)),
                      constant_values=-1.0)
    if grid.shape[1] % factor or grid.shape[2] % factor:
        raise DimensionError(
            f"dims {grid.shape[1]}x{grid.shape[2]} after padding are not "
            f"divisible by factor {factor}"
        )
    nr, nc = grid.shape[1] // factor, grid.shape[2] // factor
    pooled = grid.reshape(-1, nr, factor, nc, factor).mean(axis=(2, 4))
    return pooled.reshape(-1, nr * nc)


def _encode_dataset(ds: Dataset):
    meta = {"kind": "dataset", "provenance": ds.provenance,
            "has_y": ds.y is not None}
    arrays = [("x", ds.x), ("norm_lo", ds.norm_lo), ("norm_hi", ds.norm_hi)]
    if ds.y is not None:
        arrays.append(("y", ds.y.astype(np.float64)))
    return meta, arrays


def _decode_dataset(meta, arrays) -> Dataset:
    y = None
    if meta["has_y"]:
        y = np.round(arrays["y"]).astype(np.int64)
    return Dataset(arrays["x"], arrays["norm_lo"], arrays["norm_hi"], y=y,
                   provenance=meta["provenance"])


checkpoint.register("dataset", Dataset, _encode_dataset, _decode_dataset)
