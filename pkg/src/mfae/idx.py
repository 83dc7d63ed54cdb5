"""IDX image containers and the covariance-whitening preprocessor.

IDX is the big-endian binary format of the MNIST family: a four-byte
magic (two zero bytes, an element-type byte, the number of dimensions),
one unsigned 32-bit size per dimension, then the raw payload in row-major
order.  Only the unsigned-byte element type (0x08) is supported.

The preprocessor centers the images, rotates them into the eigenbasis of
the estimated covariance and rescales by 1/sqrt(d), after which the data
matches a SpectralModel with identity rotation and the floored covariance
spectrum.
"""

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .spectral import make_spectral_model

__all__ = [
    "IdxTensor",
    "parse_idx",
    "serialize_idx",
    "images_as_rows",
    "IdxPreprocessor",
    "save_basis",
    "load_basis",
]

IDX_UBYTE = 0x08
EIGVAL_FLOOR = 1e-5
BASIS_MAGIC = b"MFUB"


@dataclass(frozen=True)
class IdxTensor:
    """Parsed IDX payload: dimension sizes plus flat unsigned bytes."""

    dims: tuple
    payload: np.ndarray  # uint8, length prod(dims)

    @property
    def n_items(self):
        return self.dims[0] if self.dims else 0

    @property
    def item_size(self):
        return int(np.prod(self.dims[1:], dtype=np.int64)) if len(self.dims) > 1 else 1


def parse_idx(blob):
    """Decode IDX bytes, enforcing the exact header and payload length."""
    if len(blob) < 4:
        raise ValueError("IDX data shorter than the 4-byte magic")
    zero0, zero1, type_byte, ndim = blob[0], blob[1], blob[2], blob[3]
    if zero0 != 0 or zero1 != 0:
        raise ValueError(f"bad IDX magic: first two bytes {blob[:2]!r} must be zero")
    if type_byte != IDX_UBYTE:
        raise ValueError(f"unsupported IDX element type 0x{type_byte:02x} (only 0x08)")
    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise ValueError("IDX data truncated inside the dimension table")
    dims = struct.unpack(f">{ndim}I", blob[4:header_len])
    expected = int(np.prod(dims, dtype=np.int64)) if ndim else 0
    payload = blob[header_len:]
    if len(payload) != expected:
        raise ValueError(f"IDX payload has {len(payload)} bytes, expected {expected}")
    return IdxTensor(dims=tuple(int(s) for s in dims), payload=np.frombuffer(payload, dtype=np.uint8))


def serialize_idx(tensor):
    """Inverse of parse_idx; the round trip is byte-identical."""
    ndim = len(tensor.dims)
    head = bytes([0, 0, IDX_UBYTE, ndim]) + struct.pack(f">{ndim}I", *tensor.dims)
    return head + tensor.payload.astype(np.uint8).tobytes()


def images_as_rows(tensor):
    """Flatten an image tensor to (n, d) floats with pixels scaled to [0, 1]."""
    n = tensor.n_items
    return tensor.payload.astype(float).reshape(n, tensor.item_size) / 255.0


class IdxPreprocessor(TransformerMixin, BaseEstimator):
    """Center, rotate to the covariance eigenbasis and scale by 1/sqrt(d).

    After fit, ``eigvals_`` holds the covariance spectrum floored at 1e-5
    (sorted nonincreasing) and ``to_spectral_model()`` yields the matching
    synthetic data law for the prediction formulas.
    """

    def __init__(self, floor=EIGVAL_FLOOR):
        self.floor = floor

    def fit(self, images, y=None):
        images = np.asarray(images, dtype=float)
        if images.ndim != 2 or images.shape[0] < 2:
            raise ValueError("need a (n>=2, d) array of flattened images")
        n, d = images.shape
        self.mean_ = images.mean(axis=0)
        centered = images - self.mean_
        cov = (centered.T @ centered) / n
        eigvals, basis = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1]
        self.eigvals_ = np.maximum(eigvals[order], self.floor)
        self.basis_ = basis[:, order]
        self.dim_ = d
        return self

    def _require_fit(self):
        if not hasattr(self, "basis_"):
            raise NotFittedError("IdxPreprocessor must be fit before use")

    def transform(self, images):
        """U^T (image - mean) / sqrt(d) for each row."""
        self._require_fit()
        images = np.asarray(images, dtype=float)
        single = images.ndim == 1
        rows = np.atleast_2d(images)
        if rows.shape[1] != self.dim_:
            raise ValueError(f"images have {rows.shape[1]} pixels, preprocessor expects {self.dim_}")
        out = (rows - self.mean_) @ self.basis_ / np.sqrt(self.dim_)
        return out[0] if single else out

    def to_spectral_model(self):
        """Data law matched to the transformed images (identity rotation)."""
        self._require_fit()
        return make_spectral_model(self.eigvals_)


def save_basis(path, basis):
    """Binary basis export: magic, dimension u64, row-major f64 (LE)."""
    basis = np.ascontiguousarray(basis, dtype="<f8")
    if basis.ndim != 2 or basis.shape[0] != basis.shape[1]:
        raise ValueError("basis must be square")
    with open(path, "wb") as fh:
        fh.write(BASIS_MAGIC)
        fh.write(struct.pack("<Q", basis.shape[0]))
        fh.write(basis.tobytes())


def load_basis(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != BASIS_MAGIC:
        raise ValueError(f"{path}: bad basis magic {blob[:4]!r}")
    (d,) = struct.unpack_from("<Q", blob, 4)
    expected = 4 + 8 + 8 * d * d
    if len(blob) != expected:
        raise ValueError(f"{path}: basis size {len(blob)} != expected {expected}")
    return np.frombuffer(blob, dtype="<f8", offset=12).reshape(int(d), int(d)).copy()
