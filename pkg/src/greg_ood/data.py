"""Dataset generation, splitting, and file I/O.

The toy task is a 2-D Gaussian mixture (in-distribution, one class per
component) surrounded by annular point clouds: a wide ring as the auxiliary
outlier pool and a separate ring as the held-out OOD test set. Rings with
inner radius beyond the mixture's reach keep the two populations disjoint,
which is what makes exact separability checks possible downstream.

Files: labeled data travels as CSV (columns x0..x{d-1},label; label -1 means
unlabeled) and raw tensors as IDX (big-endian, unsigned byte payload scaled
to [0, 1] on load).
"""

import csv
import struct
from dataclasses import dataclass

import numpy as np


@dataclass
class LabeledSet:
    x: np.ndarray  # (n, d) float64
    y: np.ndarray | None = None  # (n,) int64 class labels, or None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 2:
            raise ValueError(f"x must be (n, d), got shape {self.x.shape}")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape != (self.x.shape[0],):
                raise ValueError("y must have one label per row of x")

    def __len__(self):
        return self.x.shape[0]


def circle_means(k: int, radius: float, phase: float = np.pi / 4.0) -> np.ndarray:
    """k component means equally spaced on a circle, first at angle `phase`."""
    angles = phase + 2.0 * np.pi * np.arange(k) / k
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def gen_gaussian_mixture(n_per_class: int, means: np.ndarray, sigma: float, seed: int) -> LabeledSet:
    """Isotropic Gaussian blob per mean; labels follow mean order."""
    means = np.asarray(means, dtype=np.float64)
    rng = np.random.Generator(np.random.PCG64(seed))
    xs, ys = [], []
    for c, mu in enumerate(means):
        xs.append(mu + sigma * rng.standard_normal((n_per_class, means.shape[1])))
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    return LabeledSet(np.concatenate(xs), np.concatenate(ys))


def gen_ring(n: int, r_min: float, r_max: float, seed: int) -> LabeledSet:
    """Unlabeled annulus: uniform angle, radius uniform in [r_min, r_max]."""
    if not 0.0 <= r_min <= r_max:
        raise ValueError("need 0 <= r_min <= r_max")
    rng = np.random.Generator(np.random.PCG64(seed))
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    r = rng.uniform(r_min, r_max, n)
    return LabeledSet(np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1))


def split(ds: LabeledSet, fractions, seed: int) -> list[LabeledSet]:
    """Disjoint covering split, stratified per class when labels exist.

    Boundaries are cumulative-fraction positions rounded to the nearest
    integer, so part sizes never drift by more than one sample per class.
    """
    fractions = [float(f) for f in fractions]
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must be nonnegative and sum to 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    cum = np.cumsum(fractions)

    def cut(idx):
        idx = rng.permutation(idx)
        bounds = [0] + [int(round(c * idx.size)) for c in cum]
        bounds[-1] = idx.size
        return [idx[a:b] for a, b in zip(bounds, bounds[1:])]

    if ds.y is None:
        parts = cut(np.arange(len(ds)))
        return [LabeledSet(ds.x[p]) for p in parts]
    groups = [cut(np.flatnonzero(ds.y == c)) for c in np.unique(ds.y)]
    out = []
    for i in range(len(fractions)):
        idx = np.concatenate([g[i] for g in groups])
        out.append(LabeledSet(ds.x[idx], ds.y[idx]))
    return out


# ---------------------------------------------------------------- CSV


def save_csv(path, ds: LabeledSet) -> None:
    d = ds.x.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(d)] + ["label"])
        labels = ds.y if ds.y is not None else np.full(len(ds), -1, dtype=np.int64)
        for row, lab in zip(ds.x, labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def load_csv(path) -> LabeledSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[-1] != "label" or any(
            h != f"x{j}" for j, h in enumerate(header[:-1])
        ):
            raise ValueError(f"{path}: expected header x0,...,label, got {header}")
        xs, ys = [], []
        for row in reader:
            if len(row) != len(header):
                raise ValueError(f"{path}: row has {len(row)} fields, expected {len(header)}")
            xs.append([float(v) for v in row[:-1]])
            ys.append(int(row[-1]))
    x = np.array(xs, dtype=np.float64).reshape(len(xs), len(header) - 1)
    y = np.array(ys, dtype=np.int64)
    return LabeledSet(x, None if (y == -1).all() else y)


# ---------------------------------------------------------------- IDX


class IdxFormatError(ValueError):
    """Malformed IDX container (magic, dtype code, or rank mismatch)."""


class IdxTruncationError(IdxFormatError):
    """File ends before the declared payload (or carries trailing bytes)."""


IDX_UBYTE = 0x08


def save_idx(path, array: np.ndarray) -> None:
    """Write an unsigned-byte IDX tensor (any rank from 1 to 4)."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise IdxFormatError(f"save_idx needs uint8 data, got {arr.dtype}")
    if not 1 <= arr.ndim <= 4:
        raise IdxFormatError(f"save_idx supports rank 1..4, got {arr.ndim}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, IDX_UBYTE, arr.ndim))
        for extent in arr.shape:
            fh.write(struct.pack(">I", extent))
        fh.write(arr.tobytes(order="C"))


def load_idx(path) -> np.ndarray:
    """Read an unsigned-byte IDX tensor and scale it to float64 in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise IdxTruncationError(f"{path}: only {len(blob)} bytes, no room for a header")
    zero0, zero1, dtype_code, rank = struct.unpack(">BBBB", blob[:4])
    if zero0 != 0 or zero1 != 0:
        raise IdxFormatError(f"{path}: bad magic bytes {blob[:2].hex()}")
    if dtype_code != IDX_UBYTE:
        raise IdxFormatError(f"{path}: unsupported dtype code 0x{dtype_code:02x}")
    if not 1 <= rank <= 4:
        raise IdxFormatError(f"{path}: unsupported rank {rank}")
    need = 4 + 4 * rank
    if len(blob) < need:
        raise IdxTruncationError(f"{path}: header declares rank {rank} but file is {len(blob)} bytes")
    shape = struct.unpack(f">{rank}I", blob[4:need])
    count = int(np.prod(shape, dtype=np.int64))
    if len(blob) - need < count:
        raise IdxTruncationError(
            f"{path}: payload needs {count} bytes, found {len(blob) - need}"
        )
    if len(blob) - need > count:
        raise IdxTruncationError(
            f"{path}: {len(blob) - need - count} trailing bytes after payload"
        )
    flat = np.frombuffer(blob, dtype=np.uint8, offset=need)
    return flat.reshape(shape).astype(np.float64) / 255.0
