"""Binary checkpoint container for trajectories, ensembles, and eigen-triples.

Layout (all little-endian):

    magic    4 bytes  b"FKNS"
    version  u16      currently 1
    kind     u16      1 = trajectory, 2 = ensemble, 3 = eigen-triple
    K, N, d  i64 each
    nu, dt, h, t      f64 each
    n_frames i64, n_coeffs i64
    frames   n_frames * n_coeffs coefficients, each a (real, imag) pair of f64
    [kind 2/3] weight block: n_frames f64
    [kind 3]   lambda table: i64 count, then f64 values

A byte-swapped writer produces an absurd version number, which is rejected
with a pointer at the byte order; the format is little-endian only.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..spectral import TorusSpec
from ..feynman_kac import WeightedEnsemble

MAGIC = b"FKNS"
VERSION = 1
KIND_TRAJECTORY = 1
KIND_ENSEMBLE = 2
KIND_EIGEN = 3

_HEAD = struct.Struct("<4sHHqqqdddd")


class CheckpointError(IOError):
    """Malformed, truncated, or unsupported checkpoint file."""


def _write_header(f, kind: int, spec: TorusSpec, d: int, nu: float, dt: float, h: float, t: float):
    f.write(_HEAD.pack(MAGIC, VERSION, kind, spec.truncation_radius, spec.grid_size, d, nu, dt, h, t))


def _read_exact(f, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError("truncated checkpoint file")
    return b


def _read_header(f):
    magic, version, kind, K, N, d, nu, dt, h, t = _HEAD.unpack(_read_exact(f, _HEAD.size))
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}; not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(
            f"unsupported version {version}"
            + ("; value suggests a byte-order mismatch (format is little-endian)" if version > 255 else "")
        )
    return kind, K, N, d, nu, dt, h, t


def _write_frames(f, frames: np.ndarray):
    n_frames, n_coeffs = frames.shape
    f.write(struct.pack("<qq", n_frames, n_coeffs))
    pairs = np.empty((n_frames, n_coeffs, 2))
    pairs[..., 0] = frames.real
    pairs[..., 1] = frames.imag
    f.write(pairs.astype("<f8").tobytes())


def _read_frames(f) -> np.ndarray:
    n_frames, n_coeffs = struct.unpack("<qq", _read_exact(f, 16))
    raw = np.frombuffer(_read_exact(f, n_frames * n_coeffs * 16), dtype="<f8")
    pairs = raw.reshape(n_frames, n_coeffs, 2)
    return pairs[..., 0] + 1j * pairs[..., 1]


def save_trajectory(path, spec: TorusSpec, frames: np.ndarray, *, d: int, nu: float, dt: float,
                    h: float, t: float) -> None:
    with open(path, "wb") as f:
        _write_header(f, KIND_TRAJECTORY, spec, d, nu, dt, h, t)
        _write_frames(f, np.asarray(frames, dtype=complex))


def save_ensemble(path, ensemble: WeightedEnsemble, *, d: int, nu: float, dt: float,
                  h: float, t: float) -> None:
    with open(path, "wb") as f:
        _write_header(f, KIND_ENSEMBLE, ensemble.spec, d, nu, dt, h, t)
        _write_frames(f, ensemble.coeffs)
        f.write(ensemble.weights.astype("<f8").tobytes())


def save_eigen(path, spec: TorusSpec, ensembles, lam: np.ndarray, *, d: int, nu: float,
               dt: float) -> None:
    """Eigen-triple container: per-node ensembles concatenated, weights, lambda table."""
    with open(path, "wb") as f:
        _write_header(f, KIND_EIGEN, spec, d, nu, dt, 0.0, 0.0)
        f.write(struct.pack("<q", len(ensembles)))
        for ens in ensembles:
            _write_frames(f, ens.coeffs)
            f.write(ens.weights.astype("<f8").tobytes())
        lam = np.asarray(lam, dtype=float)
        f.write(struct.pack("<q", lam.size))
        f.write(lam.astype("<f8").tobytes())


def load_checkpoint(path):
    """Load any checkpoint kind; returns a dict with the header fields and payload."""
    with open(path, "rb") as f:
        kind, K, N, d, nu, dt, h, t = _read_header(f)
        spec = TorusSpec(K, N)
        out = {"kind": kind, "spec": spec, "d": d, "nu": nu, "dt": dt, "h": h, "t": t}
        if kind == KIND_TRAJECTORY:
            out["frames"] = _read_frames(f)
        elif kind == KIND_ENSEMBLE:
            coeffs = _read_frames(f)
            w = np.frombuffer(_read_exact(f, coeffs.shape[0] * 8), dtype="<f8").copy()
            out["ensemble"] = WeightedEnsemble(spec, coeffs, w)
        elif kind == KIND_EIGEN:
            (n_nodes,) = struct.unpack("<q", _read_exact(f, 8))
            ensembles = []
            for _ in range(n_nodes):
                coeffs = _read_frames(f)
                w = np.frombuffer(_read_exact(f, coeffs.shape[0] * 8), dtype="<f8").copy()
                ensembles.append(WeightedEnsemble(spec, coeffs, w))
            (n_lam,) = struct.unpack("<q", _read_exact(f, 8))
            lam = np.frombuffer(_read_exact(f, n_lam * 8), dtype="<f8").copy()
            out["ensembles"] = ensembles
            out["lam"] = lam
        else:
            raise CheckpointError(f"unknown checkpoint kind {kind}")
        if f.read(1):
            raise CheckpointError("trailing bytes after checkpoint payload")
    return out
