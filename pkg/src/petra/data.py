"""Dataset ingestion, seeded splits, normalization and the built-in synthetic generators.

File formats:

* tabular CSV: header row, numeric feature columns, target in the last column
* timeseries CSV: same layout, the feature columns are the time steps of one
  series (``t0, t1, ..., target``); features become shape ``(1, 1, T)``
* image binary ``.pimg``: ``b"PIMG"``, then little-endian u32 ``n, c, h, w``,
  then ``n*c*h*w`` u8 pixels (sample-major, CHW), then ``n`` u8 labels
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from petra.rng import make_rng

FORMATS = ("tabular", "timeseries", "image")
PIMG_MAGIC = b"PIMG"
DEFAULT_SPLIT = (0.7, 0.15, 0.15)


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    splits: dict = field(default_factory=dict)  # name -> row indices into the raw file
    norm: dict = field(default_factory=dict)  # mean / std (per column) or scale

    @property
    def input_shape(self) -> tuple:
        return tuple(self.x_train.shape[1:])


def split_indices(n: int, seed: int, fractions=DEFAULT_SPLIT) -> dict:
    """Seeded shuffle cut into train/val/test; disjoint and covering."""
    if n < 3:
        raise DataError(f"need at least 3 rows to split, got {n}")
    order = make_rng(seed, "split").permutation(n)
    n_train = int(math.floor(fractions[0] * n + 1e-9))
    n_val = int(math.floor(fractions[1] * n + 1e-9))
    return {
        "train": np.sort(order[:n_train]),
        "val": np.sort(order[n_train:n_train + n_val]),
        "test": np.sort(order[n_train + n_val:]),
    }


def prepare(x, y, kind: str, seed: int = 0, fractions=DEFAULT_SPLIT, dtype=np.float32) -> Dataset:
    """Split and normalize raw arrays. ``kind`` is a file format name."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(x) != len(y):
        raise DataError("features and targets differ in length")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite feature values")
    sp = split_indices(len(x), seed, fractions)
    if kind == "image":
        norm = {"scale": 255.0}
        xn = x / 255.0
    else:
        flat = x.reshape(len(x), -1)
        mu = flat[sp["train"]].mean(axis=0)
        sd = flat[sp["train"]].std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        xn = ((flat - mu) / sd).reshape(x.shape)
        norm = {"mean": mu.tolist(), "std": sd.tolist()}
    xn = xn.astype(dtype)
    return Dataset(xn[sp["train"]], y[sp["train"]], xn[sp["val"]], y[sp["val"]],
                   xn[sp["test"]], y[sp["test"]], splits=sp, norm=norm)


def _targets(raw: np.ndarray, task_kind: str):
    if task_kind == "regression":
        return raw.astype(np.float64)
    if np.any(raw != np.round(raw)) or np.any(raw < 0):
        raise DataError("classification targets must be non-negative integers")
    return raw.astype(np.int64)


def read_csv(path) -> tuple:
    """Numeric CSV with header; returns ``(features, last column)``."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        width = len(header)
        if width < 2:
            raise DataError(f"{path}: need at least one feature column and a target")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != width:
                raise DataError(f"{path}: line {line}: expected {width} cells, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise DataError(f"{path}: line {line}: non-numeric cell") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}: line {line}: NaN or infinite cell")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    return arr[:, :-1], arr[:, -1]


def write_csv(path, x, y, prefix="x"):
    x = np.asarray(x).reshape(len(x), -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"{prefix}{i}" for i in range(x.shape[1])] + ["target"])
        for row, t in zip(x, y):
            w.writerow([repr(float(v)) for v in row] + [repr(t.item() if hasattr(t, "item") else t)])


def read_pimg(path) -> tuple:
    blob = Path(path).read_bytes()
    if blob[:4] != PIMG_MAGIC:
        raise DataError(f"{path}: bad magic, expected PIMG")
    if len(blob) < 20:
        raise DataError(f"{path}: truncated header")
    n, c, h, w = struct.unpack_from("<4I", blob, 4)
    npx = n * c * h * w
    if len(blob) != 20 + npx + n:
        raise DataError(f"{path}: expected {20 + npx + n} bytes, got {len(blob)}")
    x = np.frombuffer(blob, dtype=np.uint8, count=npx, offset=20).reshape(n, c, h, w)
    y = np.frombuffer(blob, dtype=np.uint8, count=n, offset=20 + npx)
    return x.astype(np.float64), y.astype(np.int64)


def write_pimg(path, x, y):
    x = np.asarray(x, dtype=np.uint8)
    n, c, h, w = x.shape
    Path(path).write_bytes(PIMG_MAGIC + struct.pack("<4I", n, c, h, w) + x.tobytes()
                           + np.asarray(y, dtype=np.uint8).tobytes())


def load_dataset(path, fmt: str, task_kind: str, seed: int = 0, fractions=DEFAULT_SPLIT,
                 dtype=np.float32) -> Dataset:
    if fmt not in FORMATS:
        raise DataError(f"unknown format {fmt!r}, expected one of {FORMATS}")
    if not Path(path).exists():
        raise DataError(f"{path}: no such file")
    if fmt == "image":
        x, y = read_pimg(path)
    else:
        x, y = read_csv(path)
        if fmt == "timeseries":
            x = x.reshape(len(x), 1, 1, x.shape[1])
    return prepare(x, _targets(y, task_kind), fmt, seed, fractions, dtype)


# ---------------------------------------------------------------- synthetic
def two_gaussians(n=2000, dim=16, separation=0.5, seed=0):
    """Binary task: unit-variance Gaussians whose means differ by ``separation`` per dimension."""
    rng = make_rng(seed, "two_gaussians")
    y = (rng.random(n) < 0.5).astype(np.int64)
    x = rng.standard_normal((n, dim)) + separation * y[:, None]
    return x, y


def image_blobs(n=1000, classes=10, size=16, seed=0):
    """10-class 1x16x16 u8 images: a class-specific bright blob plus noise."""
    rng = make_rng(seed, "image_blobs")
    y = rng.integers(0, classes, n)
    yy, xx = np.mgrid[0:size, 0:size]
    centers = [(size * (0.2 + 0.6 * ((k * 3) % classes) / classes),
                size * (0.2 + 0.6 * ((k * 7) % classes) / classes)) for k in range(classes)]
    imgs = np.empty((n, 1, size, size))
    for i, k in enumerate(y):
        cy, cx = centers[k]
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 2.0 ** 2))
        imgs[i, 0] = 200 * blob + rng.uniform(0, 55, (size, size))
    return np.clip(np.round(imgs), 0, 255).astype(np.uint8), y


def ar_series(n=1000, length=32, seed=0, phi=(0.6, -0.3), noise=0.5):
    """AR(2) windows; the target is the next value of each series."""
    rng = make_rng(seed, "ar_series")
    total = length + 1 + 20
    out = np.zeros((n, total))
    e = rng.standard_normal((n, total)) * noise
    for t in range(2, total):
        out[:, t] = phi[0] * out[:, t - 1] + phi[1] * out[:, t - 2] + e[:, t]
    win = out[:, -(length + 1):]
    return win[:, :-1], win[:, -1]


SYNTHETIC = {"two_gaussians": ("tabular", "binary"),
             "image_blobs": ("image", "multiclass"),
             "ar_series": ("timeseries", "regression")}


def synthetic(name: str, n: int | None = None, seed: int = 0, dtype=np.float32, **kw) -> Dataset:
    """Generate and prepare a built-in dataset by name."""
    if name not in SYNTHETIC:
        raise DataError(f"unknown synthetic dataset {name!r}")
    gen = {"two_gaussians": two_gaussians, "image_blobs": image_blobs, "ar_series": ar_series}[name]
    if n is not None:
        kw["n"] = n
    x, y = gen(seed=seed, **kw)
    fmt = SYNTHETIC[name][0]
    if fmt == "timeseries":
        x = x.reshape(len(x), 1, 1, x.shape[1])
    return prepare(x, y, fmt, seed, dtype=dtype)
