"""Dataset readers, splitting and seeded synthetic generators."""

import gzip
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .exceptions import IdxFormatError, IdxLengthError, RatingsParseError
from .manifolds import qf

__all__ = [
    "DenseDataset",
    "SparseRatings",
    "read_idx",
    "write_idx",
    "read_dense_csv",
    "read_ratings_csv",
    "write_ratings_csv",
    "split",
    "synth_pca",
    "synth_lrmc",
]

logger = logging.getLogger(__name__)

IDX_UBYTE_3D = 0x00000803


@dataclass
class DenseDataset:
    """Samples stored one per row."""

    samples: np.ndarray
    provenance: str = ""
    normalization: str = "none"
    basis: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or 0 in self.samples.shape:
            raise ValueError("samples must be a non-empty 2-d array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    @property
    def n_samples(self):
        return self.samples.shape[0]

    @property
    def n_features(self):
        return self.samples.shape[1]

    def __len__(self):
        return self.n_samples


@dataclass
class SparseRatings:
    """Observed entries of an ``n x N`` matrix as (row, col, value) triplets.

    Rows are items and columns are users; ``row_ids``/``col_ids`` keep the
    original identifiers in index order when the data came from a file.
    """

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    shape: tuple
    row_ids: Optional[list] = None
    col_ids: Optional[list] = None
    provenance: str = ""
    n_duplicates: int = 0
    basis: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        self.shape = (int(self.shape[0]), int(self.shape[1]))
        if not (self.rows.shape == self.cols.shape == self.values.shape):
            raise ValueError("rows, cols and values must have equal length")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("rating values must be finite")
        if self.rows.size:
            if self.rows.min() < 0 or self.rows.max() >= self.shape[0]:
                raise ValueError("row index out of range")
            if self.cols.min() < 0 or self.cols.max() >= self.shape[1]:
                raise ValueError("column index out of range")
        keys = self.rows * self.shape[1] + self.cols
        if np.unique(keys).size != keys.size:
            raise ValueError("duplicate (row, col) entries")

    def __len__(self):
        return self.values.size

    @property
    def observed_fraction(self):
        return len(self) / float(self.shape[0] * self.shape[1])

    def to_csc(self):
        return sp.csc_matrix((self.values, (self.rows, self.cols)), shape=self.shape)

    def mask_csc(self):
        return sp.csc_matrix((np.ones(len(self)), (self.rows, self.cols)), shape=self.shape)

    def to_dense(self, fill=np.nan):
        out = np.full(self.shape, fill, dtype=float)
        out[self.rows, self.cols] = self.values
        return out

    def select_columns(self, cols):
        """Sub-matrix with the given columns, re-indexed ``0..len(cols)-1``."""
        cols = np.asarray(cols, dtype=np.int64)
        remap = np.full(self.shape[1], -1, dtype=np.int64)
        remap[cols] = np.arange(cols.size)
        keep = remap[self.cols] >= 0
        col_ids = None if self.col_ids is None else [self.col_ids[c] for c in cols]
        return SparseRatings(
            self.rows[keep], remap[self.cols[keep]], self.values[keep],
            (self.shape[0], cols.size), row_ids=self.row_ids, col_ids=col_ids,
            provenance=self.provenance, basis=self.basis)


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def read_idx(path):
    """Read an unsigned-byte IDX image file, scaling pixels to [0, 1].

    Each image is flattened row-major into one sample.
    """
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxLengthError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != IDX_UBYTE_3D:
        raise IdxFormatError(f"{path}: magic 0x{magic:08x}, expected 0x{IDX_UBYTE_3D:08x}")
    if len(raw) < 16:
        raise IdxLengthError(f"{path}: truncated IDX dimension header")
    count, rows, cols = struct.unpack(">III", raw[4:16])
    size = count * rows * cols
    if len(raw) - 16 < size:
        raise IdxLengthError(f"{path}: expected {size} pixel bytes, found {len(raw) - 16}")
    if count == 0 or rows * cols == 0:
        raise IdxLengthError(f"{path}: IDX file holds no pixels")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=size, offset=16)
    return DenseDataset(pixels.reshape(count, rows * cols) / 255.0,
                        provenance=f"idx:{path}", normalization="scale-1/255")


def write_idx(path, images):
    """Write uint8 images of shape (count, rows, cols) as an IDX file."""
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must have shape (count, rows, cols)")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_UBYTE_3D, *images.shape))
        fh.write(images.tobytes(order="C"))


def read_dense_csv(path, delimiter=",", scale=None):
    """One sample per row; ``scale`` multiplies every entry when given."""
    samples = np.loadtxt(path, delimiter=delimiter, ndmin=2)
    norm = "none"
    if scale is not None:
        samples = samples * float(scale)
        norm = f"scale-{scale:g}"
    return DenseDataset(samples, provenance=f"csv:{path}", normalization=norm)


def _sorted_ids(ids):
    uniq = set(ids)
    try:
        return sorted(uniq, key=int)
    except ValueError:
        return sorted(uniq)


def read_ratings_csv(path, delimiter=",", skip_header=False, rescale=None):
    """Read ``user<d>item<d>rating[<d>timestamp]`` rows into item-by-user triplets.

    Ids are re-indexed contiguously in sorted order. Repeated (user, item)
    pairs keep the last rating; the number of dropped duplicates is stored
    in ``n_duplicates`` and logged. ``rescale=(a, b)`` maps each rating
    ``r`` to ``a * r + b``.
    """
    entries = {}
    n_dup = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if skip_header and lineno == 1:
                continue
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [s.strip() for s in line.split(delimiter)]
            if len(parts) < 3:
                raise RatingsParseError(f"expected at least 3 fields, got {len(parts)}", lineno)
            user, item, rating = parts[:3]
            try:
                value = float(rating)
            except ValueError:
                raise RatingsParseError(f"unparsable rating {rating!r}", lineno) from None
            if not math.isfinite(value):
                raise RatingsParseError(f"non-finite rating {rating!r}", lineno)
            key = (user, item)
            if key in entries:
                n_dup += 1
                del entries[key]
            entries[key] = value
    if n_dup:
        logger.warning("%s: %d duplicate ratings replaced (last wins)", path, n_dup)
    users = _sorted_ids(u for u, _ in entries)
    items = _sorted_ids(i for _, i in entries)
    uidx = {u: j for j, u in enumerate(users)}
    iidx = {i: j for j, i in enumerate(items)}
    rows = np.fromiter((iidx[i] for _, i in entries), dtype=np.int64, count=len(entries))
    cols = np.fromiter((uidx[u] for u, _ in entries), dtype=np.int64, count=len(entries))
    vals = np.fromiter(entries.values(), dtype=float, count=len(entries))
    if rescale is not None:
        a, b = rescale
        vals = a * vals + b
    return SparseRatings(rows, cols, vals, (len(items), len(users)), row_ids=items,
                         col_ids=users, provenance=f"ratings:{path}", n_duplicates=n_dup)


def write_ratings_csv(path, ratings, delimiter=","):
    """Write ``user,item,rating`` rows using the stored ids when present."""
    row_ids = ratings.row_ids or [str(i) for i in range(ratings.shape[0])]
    col_ids = ratings.col_ids or [str(j) for j in range(ratings.shape[1])]
    with open(path, "w", encoding="utf-8") as fh:
        for r, c, v in zip(ratings.rows, ratings.cols, ratings.values):
            fh.write(f"{col_ids[c]}{delimiter}{row_ids[r]}{delimiter}{float(v)!r}\n")


def split(dataset, fraction=0.8, seed=0):
    """Random train/test split; samples for dense data, columns for ratings."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    n = dataset.n_samples if isinstance(dataset, DenseDataset) else dataset.shape[1]
    if n < 2:
        raise ValueError("need at least two samples to split")
    n_train = min(max(int(round(fraction * n)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    if isinstance(dataset, DenseDataset):
        return (DenseDataset(dataset.samples[tr], dataset.provenance, dataset.normalization,
                             dataset.basis),
                DenseDataset(dataset.samples[te], dataset.provenance, dataset.normalization,
                             dataset.basis))
    return dataset.select_columns(tr), dataset.select_columns(te)


def synth_pca(n, p_true, N, noise=0.0, seed=0):
    """Samples ``U* z_i + noise * w_i`` around a planted orthonormal ``U*``.

    ``z_i`` and ``w_i`` are standard normal. ``basis`` holds ``U*``.
    """
    if not 1 <= p_true <= n:
        raise ValueError("need 1 <= p_true <= n")
    rng = np.random.default_rng(seed)
    basis = qf(rng.standard_normal((n, p_true)))
    z = rng.standard_normal((N, p_true))
    x = z @ basis.T + noise * rng.standard_normal((N, n))
    return DenseDataset(x, provenance=f"synth:pca:n={n},p={p_true},N={N},noise={noise:g},seed={seed}",
                        basis=basis)


def synth_lrmc(n, N, p_true, obs_frac=0.5, noise=0.0, seed=0):
    """Rank-``p_true`` matrix ``U* V*^T`` with ``round(obs_frac * n)`` entries seen per column.

    Observed rows are drawn without replacement independently per column
    (at least one, and at least ``p_true`` when ``n`` allows it).
    """
    if not 1 <= p_true <= n:
        raise ValueError("need 1 <= p_true <= n")
    if not 0 < obs_frac <= 1:
        raise ValueError("obs_frac must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    basis = qf(rng.standard_normal((n, p_true)))
    coef = rng.standard_normal((N, p_true))
    full = basis @ coef.T
    k = min(n, max(int(round(obs_frac * n)), p_true, 1))
    rows = np.concatenate([np.sort(rng.choice(n, size=k, replace=False)) for _ in range(N)])
    cols = np.repeat(np.arange(N), k)
    vals = full[rows, cols] + noise * rng.standard_normal(rows.size)
    return SparseRatings(rows, cols, vals, (n, N), basis=basis,
                         provenance=(f"synth:lrmc:n={n},N={N},p={p_true},obs={obs_frac:g},"
                                     f"noise={noise:g},seed={seed}"))
