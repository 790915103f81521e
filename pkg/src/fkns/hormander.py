"""Bracket-closure filtration of the noise directions at finite truncation.

Level one spans the noise coefficient fields; each further level adjoins the
symmetrized quadratic interactions of the current span.  For single complex
modes the interaction is exact:

    Btilde(e_j, e_l) = (j_perp . l) (|j|^{-2} - |l|^{-2}) e_{j+l},

so the whole computation reduces to exact pair convolutions followed by
re-orthonormalization; no FFT or dealiasing enters.  Saturation is judged
against the dimension of the truncated space, a finite-K surrogate: the
verdict is explicitly "at truncation K".
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .spectral import SpectralField, TorusSpec, _freeze, tables_for


def saturation_dimension(spec: TorusSpec) -> int:
    """Real dimension of the truncated mean-free space: (2K+1)^2 - 1."""
    return 2 * tables_for(spec).n_modes


class _BracketTables:
    """Pair coefficients and scatter targets for the exact convolution."""

    def __init__(self, spec: TorusSpec):
        t = tables_for(spec)
        K = spec.truncation_radius
        k1 = np.concatenate([t.k1, -t.k1])
        k2 = np.concatenate([t.k2, -t.k2])
        n_full = k1.size
        ksq = (k1**2 + k2**2).astype(float)
        # (j_perp . l) (1/|j|^2 - 1/|l|^2) over ordered full-mode pairs
        jp_l = k1[None, :] * k2[:, None] - k1[:, None] * k2[None, :]  # j2 l1 - j1 l2
        coef = jp_l * (1.0 / ksq[:, None] - 1.0 / ksq[None, :])
        s1 = k1[:, None] + k1[None, :]
        s2 = k2[:, None] + k2[None, :]
        target = np.full((n_full, n_full), -1, dtype=np.int64)
        inside = (np.abs(s1) <= K) & (np.abs(s2) <= K)
        half = (s1 > 0) | ((s1 == 0) & (s2 > 0))
        sel = inside & half
        flat = {m: i for m, i in t.index.items()}
        tgt = np.array(
            [flat.get((a, b), -1) for a, b in zip(s1[sel].ravel(), s2[sel].ravel())],
            dtype=np.int64,
        )
        target[sel] = tgt
        keep = target >= 0
        self.n_half = t.n_modes
        self.pair_idx = np.nonzero(keep)
        self.pair_coef = coef[keep]
        self.pair_target = target[keep]


@lru_cache(maxsize=16)
def _bracket_tables(spec: TorusSpec) -> _BracketTables:
    return _BracketTables(spec)


def exact_bracket_coeffs(a: np.ndarray, b: np.ndarray, spec: TorusSpec) -> np.ndarray:
    """Symmetrized interaction of two half-spectrum coefficient vectors, exactly."""
    bt = _bracket_tables(spec)
    af = np.concatenate([a, np.conj(a)])
    bf = np.concatenate([b, np.conj(b)])
    prods = af[bt.pair_idx[0]] * bf[bt.pair_idx[1]] * bt.pair_coef
    out_re = np.bincount(bt.pair_target, weights=prods.real, minlength=bt.n_half)
    out_im = np.bincount(bt.pair_target, weights=prods.imag, minlength=bt.n_half)
    return out_re + 1j * out_im


def exact_bracket(u: SpectralField, w: SpectralField) -> SpectralField:
    """Convolution-exact counterpart of the pseudo-spectral symmetrized bracket."""
    u._check_same(w)
    return SpectralField(u.spec, _freeze(exact_bracket_coeffs(u.data, w.data, u.spec)))


# ---------------------------------------------------------------------------
# real vectorization: <u, v>_H becomes the euclidean dot product
# ---------------------------------------------------------------------------

def field_to_real(data: np.ndarray) -> np.ndarray:
    return np.concatenate([math.sqrt(2.0) * data.real, math.sqrt(2.0) * data.imag])


def real_to_field(x: np.ndarray) -> np.ndarray:
    m = x.size // 2
    return (x[:m] + 1j * x[m:]) / math.sqrt(2.0)


@dataclass(frozen=True)
class LevelReport:
    level: int
    dimension: int
    new_directions: int
    basis: np.ndarray  # (dimension, 2M) orthonormal rows, real vectorization


@dataclass(frozen=True)
class BracketClosure:
    spec: TorusSpec
    levels: tuple[LevelReport, ...]
    saturated: bool
    stalled: bool

    @property
    def final_dimension(self) -> int:
        return self.levels[-1].dimension if self.levels else 0

    def verdict(self) -> str:
        K = self.spec.truncation_radius
        if self.saturated:
            return f"saturated at truncation K={K} (dimension {self.final_dimension})"
        if self.stalled:
            return f"stalled at truncation K={K} (dimension {self.final_dimension} of {saturation_dimension(self.spec)})"
        return f"inconclusive at truncation K={K} after {len(self.levels)} levels"

    def basis_fields(self, level: int | None = None) -> list[SpectralField]:
        rep = self.levels[-1] if level is None else self.levels[level - 1]
        return [
            SpectralField(self.spec, _freeze(real_to_field(row))) for row in rep.basis
        ]

    def csv_rows(self) -> list[tuple[int, int, int]]:
        return [(r.level, r.dimension, r.new_directions) for r in self.levels]


def _orthonormalize(rows: np.ndarray, rank_tol: float, absolute: bool = False) -> np.ndarray:
    """Orthonormal row basis; rank decisions relative to the largest singular value,
    or absolute when the rows are already unit-scale candidates."""
    if rows.size == 0:
        return rows.reshape(0, rows.shape[-1] if rows.ndim == 2 else 0)
    u, s, vt = np.linalg.svd(rows, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return rows[:0]
    thresh = rank_tol if absolute else rank_tol * s[0]
    return vt[s > thresh]


def bracket_closure(
    noise,
    spec: TorusSpec,
    max_levels: int = 8,
    rank_tol: float = 1e-8,
) -> BracketClosure:
    """Compute the filtration span dimensions level by level.

    ``noise`` is a NoiseSpec or a plain sequence of SpectralFields (an empty
    sequence is allowed and reports dimension zero throughout).  Each level
    adjoins the interactions of pairs with at least one factor new since the
    previous level; pairs of older vectors already lie in the current span, so
    the resulting spans equal the ones over all ordered pairs.
    """
    if max_levels < 1:
        raise ValueError("max_levels must be >= 1")
    fields: Sequence[SpectralField]
    fields = list(noise.coefficients) if hasattr(noise, "coefficients") else list(noise)
    dim_full = saturation_dimension(spec)

    if fields:
        seed_rows = []
        for g in fields:
            x = field_to_real(g.data)
            nrm = float(np.linalg.norm(x))
            if nrm > 0.0:
                seed_rows.append(x / nrm)
        basis = _orthonormalize(np.stack(seed_rows), rank_tol, absolute=True)
    else:
        basis = np.zeros((0, dim_full))
    new = basis
    levels = [LevelReport(1, basis.shape[0], basis.shape[0], basis.copy())]
    saturated = basis.shape[0] == dim_full
    stalled = basis.shape[0] == 0

    level = 1
    while level < max_levels and not saturated and not stalled:
        level += 1
        cands = []
        for xn in new:
            a = real_to_field(xn)
            for xb in basis:
                c = exact_bracket_coeffs(a, real_to_field(xb), spec)
                nrm = math.sqrt(2.0) * float(np.linalg.norm(c))
                if nrm > 0.0:
                    cands.append(field_to_real(c) / nrm)
        if cands:
            C = np.stack(cands)
            resid = C - (C @ basis.T) @ basis
            # candidates are unit-norm, so the rank tolerance is absolute here
            added = _orthonormalize(resid, rank_tol, absolute=True)
        else:
            added = basis[:0]
        new = added
        dim_before = basis.shape[0]
        if added.shape[0]:
            basis = np.vstack([basis, added])
            # one re-orthonormalization pass to keep the block numerically tight
            basis = _orthonormalize(basis, rank_tol * 1e-3)
        gained = basis.shape[0] - dim_before
        levels.append(LevelReport(level, basis.shape[0], gained, basis.copy()))
        saturated = basis.shape[0] >= dim_full
        stalled = gained == 0 and not saturated

    return BracketClosure(spec, tuple(levels), saturated, stalled)


def subspaces_equal(a: np.ndarray, b: np.ndarray, tol: float = 1e-8) -> bool:
    """Whether two orthonormal row spans coincide up to tol (principal-angle test)."""
    if a.shape[0] != b.shape[0]:
        return False
    if a.shape[0] == 0:
        return True
    s = np.linalg.svd(a @ b.T, compute_uv=False)
    return bool(np.all(np.abs(s - 1.0) < tol))
