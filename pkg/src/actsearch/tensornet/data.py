"""Desk-scale tasks: synthetic generators and IDX/CSV image ingestion."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .layers import Conv2D, Dense, Depthwise2D, GlobalAvgPool, SoftmaxHead
from .network import NetworkSpec


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    num_classes: int
    name: str = ""

    def __post_init__(self):
        if len(self.x_train) != len(self.y_train) or len(self.x_val) != len(self.y_val):
            raise ValueError("inputs and labels differ in length")
        if len(self.x_train) == 0 or len(self.x_val) == 0:
            raise ValueError("dataset needs non-empty train and validation splits")


def make_blobs(
    seed: int = 0,
    n_train: int = 2000,
    n_val: int = 500,
    dim: int = 8,
    num_classes: int = 4,
    components: int = 3,
    spread: float = 1.0,
    scale: float = 1.6,
) -> Dataset:
    """Gaussian-mixture classification; each class mixes ``components`` blobs,
    so the optimal boundary is non-linear."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, scale, size=(num_classes, components, dim))

    def draw(n):
        y = np.arange(n) % num_classes
        rng.shuffle(y)
        comp = rng.integers(0, components, size=n)
        x = centers[y, comp] + rng.normal(0.0, spread, size=(n, dim))
        return x, y

    xt, yt = draw(n_train)
    xv, yv = draw(n_val)
    mu, sd = xt.mean(axis=0), xt.std(axis=0)
    return Dataset((xt - mu) / sd, yt, (xv - mu) / sd, yv, num_classes, "blobs")


def make_separable(seed: int = 0, n_train: int = 400, n_val: int = 200, dim: int = 2) -> Dataset:
    """Two well separated Gaussian blobs (linearly separable with high probability)."""
    rng = np.random.default_rng(seed)
    c = np.zeros(dim)
    c[0] = 3.0

    def draw(n):
        y = np.arange(n) % 2
        x = np.where(y[:, None] == 1, c, -c) + rng.normal(0.0, 0.5, size=(n, dim))
        return x, y

    xt, yt = draw(n_train)
    xv, yv = draw(n_val)
    return Dataset(xt, yt, xv, yv, 2, "separable")


def _tile(kind: int, rng: np.random.Generator, size: int) -> np.ndarray:
    r = np.arange(size)[:, None]
    c = np.arange(size)[None, :]
    period = rng.integers(2, 5)
    phase = rng.integers(0, period)
    if kind == 0:
        img = ((r + phase) % period < period / 2).astype(float) + 0 * c
    elif kind == 1:
        img = ((c + phase) % period < period / 2).astype(float) + 0 * r
    elif kind == 2:
        img = (((r + c + phase) % period) < period / 2).astype(float)
    else:
        img = (((r // 2 + c // 2 + phase) % 2) == 0).astype(float)
    return img


def make_tiles(seed: int = 0, n_train: int = 2000, n_val: int = 500, size: int = 8, noise: float = 0.6) -> Dataset:
    """8x8 single-channel textures in four classes (horizontal, vertical,
    diagonal stripes, checkerboard) with additive noise."""
    rng = np.random.default_rng(seed)

    def draw(n):
        y = np.arange(n) % 4
        rng.shuffle(y)
        x = np.stack([_tile(k, rng, size) for k in y])
        x = x + rng.normal(0.0, noise, size=x.shape)
        return x[..., None], y

    xt, yt = draw(n_train)
    xv, yv = draw(n_val)
    mu, sd = xt.mean(), xt.std()
    return Dataset((xt - mu) / sd, yt, (xv - mu) / sd, yv, 4, "tiles")


def blobs_network(dim: int = 8, hidden: int = 16, num_classes: int = 4) -> NetworkSpec:
    return NetworkSpec(
        (dim,),
        (Dense(dim, hidden), Dense(hidden, hidden), Dense(hidden, num_classes), SoftmaxHead()),
    )


def tiles_network(size: int = 8, num_classes: int = 4) -> NetworkSpec:
    return NetworkSpec(
        (size, size, 1),
        (
            Conv2D(1, 8, kernel=3, padding=1),
            Depthwise2D(8, kernel=3, padding=1),
            Conv2D(8, 16, kernel=1),
            GlobalAvgPool(),
            Dense(16, num_classes),
            SoftmaxHead(),
        ),
    )


# --- external image data -------------------------------------------------

_IDX_DTYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def _open(path: Path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def load_idx(path: str | Path) -> np.ndarray:
    """Read an IDX file (big-endian magic ``00 00 type ndim`` then dims)."""
    with _open(Path(path)) as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ValueError(f"{path}: not an IDX file")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_DTYPES:
        raise ValueError(f"{path}: unknown IDX element type 0x{code:02x}")
    dims = struct.unpack(">" + "I" * ndim, raw[4:4 + 4 * ndim])
    dtype = np.dtype(_IDX_DTYPES[code])
    count = int(np.prod(dims)) if dims else 1
    body = raw[4 + 4 * ndim:]
    if len(body) != count * dtype.itemsize:
        raise ValueError(f"{path}: expected {count} elements, found {len(body) // dtype.itemsize}")
    return np.frombuffer(body, dtype=dtype).reshape(dims).astype(np.float64)


def save_idx(path: str | Path, array: np.ndarray) -> None:
    a = np.asarray(array)
    code = {np.dtype("uint8"): 0x08, np.dtype("int32"): 0x0C, np.dtype("float64"): 0x0E}[a.dtype]
    header = bytes([0, 0, code, a.ndim]) + struct.pack(">" + "I" * a.ndim, *a.shape)
    body = a.astype(_IDX_DTYPES[code]).tobytes()
    with open(path, "wb") as fh:
        fh.write(header + body)


def load_csv(path: str | Path, side: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Rows of ``label,pixel,...``; a non-numeric first line is treated as a header.

    Pixels are reshaped to square images (``side`` inferred when omitted).
    """
    with open(path) as fh:
        first = fh.readline()
    skip = 0
    try:
        [float(v) for v in first.strip().split(",")]
    except ValueError:
        skip = 1
    data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    labels = data[:, 0].astype(np.int64)
    pixels = data[:, 1:]
    if side is None:
        side = int(round(np.sqrt(pixels.shape[1])))
    if side * side != pixels.shape[1]:
        raise ValueError(f"{path}: {pixels.shape[1]} pixels do not form a {side}x{side} image")
    return pixels.reshape(-1, side, side), labels


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic area-averaging matrix resampling ``n_in`` cells to ``n_out``."""
    edges = np.linspace(0.0, n_in, n_out + 1)
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = edges[i], edges[i + 1]
        for j in range(int(np.floor(lo)), int(np.ceil(hi))):
            m[i, j] = max(0.0, min(hi, j + 1) - max(lo, j))
        m[i] /= m[i].sum()
    return m


def downsample(images: np.ndarray, size: int = 8) -> np.ndarray:
    """Area-average ``(N, H, W)`` images down to ``(N, size, size)``."""
    images = np.asarray(images, dtype=np.float64)
    rows = _area_matrix(images.shape[1], size)
    cols = _area_matrix(images.shape[2], size)
    return np.einsum("ih,nhw,jw->nij", rows, images, cols)


def image_dataset(
    images: np.ndarray, labels: np.ndarray, size: int = 8, val_fraction: float = 0.2, seed: int = 0,
    name: str = "images",
) -> Dataset:
    """Downsample, standardise and split external images into a Dataset."""
    x = downsample(images, size)[..., None]
    y = np.asarray(labels, dtype=np.int64)
    classes = np.unique(y)
    remap = {c: i for i, c in enumerate(classes)}
    y = np.array([remap[v] for v in y])
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(y))
    n_val = max(1, int(len(y) * val_fraction))
    val, tr = order[:n_val], order[n_val:]
    mu, sd = x[tr].mean(), x[tr].std() or 1.0
    return Dataset((x[tr] - mu) / sd, y[tr], (x[val] - mu) / sd, y[val], len(classes), name)


TASKS = {
    "blobs": (make_blobs, blobs_network),
    "tiles": (make_tiles, tiles_network),
}


def load_task(name: str, seed: int = 0, **data_kwargs) -> tuple[Dataset, NetworkSpec]:
    """Dataset and architecture for a named task (``blobs`` or ``tiles``)."""
    try:
        make, arch = TASKS[name]
    except KeyError:
        raise ValueError(f"unknown task {name!r}; choose from {sorted(TASKS)}") from None
    data = make(seed=seed, **data_kwargs)
    return data, arch()
