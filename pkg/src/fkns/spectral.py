"""Truncated Fourier representation of mean-free vorticity fields on the 2-torus.

Fields live on the torus [0, 2pi)^2 and are real with zero spatial mean.  A
field is stored through the coefficients of its retained wavenumbers
k in Z^2 \\ {0} with |k|_inf <= K; only the half-spectrum with
k1 > 0, or (k1 == 0 and k2 > 0) is kept, the conjugate partner being implied.
Reality is therefore a structural invariant, not an assertion.

Norm convention: ||w||^2 = sum_k |w_hat(k)|^2 over the full spectrum (the
Fourier-l2 convention, absorbing the (2pi)^2 volume factor).  The grid-space
counterpart is mean(w(x)^2) over collocation points.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np
import scipy.fft as _fft

_FFT_WORKERS = 2


class SpectralError(ValueError):
    """Raised for invalid wavenumbers or inconsistent coefficient data."""


@dataclass(frozen=True)
class TorusSpec:
    """Discretization of the mean-free space: truncation radius and collocation grid.

    ``truncation_radius`` retains wavenumbers with |k|_inf <= K (k != 0);
    ``grid_size`` is the collocation points per axis; ``dealias_fraction``
    sets the pseudo-spectral mask cutoff at fraction * (N/2).
    """

    truncation_radius: int
    grid_size: int
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        K, N = self.truncation_radius, self.grid_size
        if K < 1:
            raise SpectralError("truncation_radius must be a positive integer")
        if N % 2 != 0:
            raise SpectralError("grid_size must be even")
        if N < 2 * (K + 1):
            raise SpectralError(f"grid_size {N} too small; need N >= 2(K+1) = {2 * (K + 1)}")
        if not (0.0 < self.dealias_fraction < 1.0):
            raise SpectralError("dealias cutoff must lie strictly below the Nyquist frequency")

    @property
    def n_half_modes(self) -> int:
        return tables_for(self).n_modes


class _ModeTables:
    """Index tables tying the half-spectrum storage to the rfft2 grid layout.

    Native grid arrays are indexed ``grid[j2, j1]`` with x1 along the last
    axis (the rfft half axis carries k1 >= 0).
    """

    def __init__(self, spec: TorusSpec):
        K, N = spec.truncation_radius, spec.grid_size
        modes = [
            (k1, k2)
            for k1 in range(0, K + 1)
            for k2 in range(-K, K + 1)
            if (k1 > 0 or (k1 == 0 and k2 > 0))
        ]
        self.spec = spec
        self.modes = modes
        self.n_modes = len(modes)
        self.index = {m: i for i, m in enumerate(modes)}
        self.k1 = np.array([m[0] for m in modes])
        self.k2 = np.array([m[1] for m in modes])
        self.ksq = (self.k1**2 + self.k2**2).astype(float)
        # scatter positions into the (N, N//2+1) rfft2 layout
        self.iy = np.mod(self.k2, N)
        self.ix = self.k1
        self.zero_col = self.k1 == 0
        self.iy_conj = np.mod(-self.k2[self.zero_col], N)
        cutoff = spec.dealias_fraction * (N / 2.0)
        self.dealias_keep = np.maximum(np.abs(self.k1), np.abs(self.k2)) < cutoff
        inv = 1.0 / self.ksq
        # velocity (Biot-Savart) and gradient multipliers:
        # u_hat = i k_perp w_hat / |k|^2 with k_perp = (k2, -k1)
        self.vel1 = 1j * self.k2 * inv
        self.vel2 = -1j * self.k1 * inv
        self.grad1 = 1j * self.k1.astype(float)
        self.grad2 = 1j * self.k2.astype(float)
        self.advect_facs = np.stack([self.vel1, self.vel2, self.grad1, self.grad2])


@lru_cache(maxsize=16)
def tables_for(spec: TorusSpec) -> _ModeTables:
    return _ModeTables(spec)


def _check_wavevector(spec: TorusSpec, k: tuple[int, int]) -> None:
    k1, k2 = k
    if (k1, k2) == (0, 0):
        raise SpectralError("the zero mode is excluded (fields are mean-free)")
    if max(abs(k1), abs(k2)) > spec.truncation_radius:
        raise SpectralError(f"wavenumber {k} outside truncation |k|_inf <= {spec.truncation_radius}")


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SpectralField:
    """Immutable real mean-free field stored by its half-spectrum coefficients."""

    spec: TorusSpec
    data: np.ndarray  # (n_half_modes,) complex128, read-only

    def __post_init__(self):
        t = tables_for(self.spec)
        if self.data.shape != (t.n_modes,) or self.data.dtype != np.complex128:
            raise SpectralError("coefficient array must be complex128 of length n_half_modes")

    @staticmethod
    def zero(spec: TorusSpec) -> "SpectralField":
        return SpectralField(spec, _freeze(np.zeros(tables_for(spec).n_modes, dtype=complex)))

    @staticmethod
    def from_modes(spec: TorusSpec, coeffs: Mapping[tuple[int, int], complex]) -> "SpectralField":
        """Build a field from a wavenumber -> amplitude map.

        Either half of a conjugate pair may be given; giving both is allowed
        only when they are consistent (w_hat(-k) == conj(w_hat(k))).
        """
        t = tables_for(spec)
        data = np.zeros(t.n_modes, dtype=complex)
        seen: dict[int, complex] = {}
        for k, v in coeffs.items():
            k = (int(k[0]), int(k[1]))
            _check_wavevector(spec, k)
            if k in t.index:
                i, val = t.index[k], complex(v)
            else:
                i, val = t.index[(-k[0], -k[1])], np.conj(complex(v))
            if i in seen and not np.isclose(seen[i], val):
                raise SpectralError(f"inconsistent conjugate pair for wavenumber {k}")
            seen[i] = val
            data[i] = val
        return SpectralField(spec, _freeze(data))

    @staticmethod
    def from_grid(spec: TorusSpec, grid: np.ndarray) -> "SpectralField":
        """Project a real collocation-grid field (indexed ``grid[j1, j2]``) onto the retained modes."""
        N = spec.grid_size
        if grid.shape != (N, N):
            raise SpectralError(f"grid must be shape ({N}, {N})")
        native = np.asarray(grid, dtype=float).T  # native layout: [j2, j1]
        return SpectralField(spec, _freeze(coeffs_from_grid(native[None], spec)[0]))

    @staticmethod
    def random(spec: TorusSpec, rng: np.random.Generator, decay: float = 0.5, scale: float = 1.0) -> "SpectralField":
        """Random field with amplitudes ~ scale * exp(-decay |k|^2), dealias-clean."""
        t = tables_for(spec)
        amp = scale * np.exp(-decay * t.ksq)
        z = rng.standard_normal(t.n_modes) + 1j * rng.standard_normal(t.n_modes)
        return SpectralField(spec, _freeze(np.where(t.dealias_keep, amp * z, 0.0)))

    def coeff(self, k: tuple[int, int]) -> complex:
        """Coefficient w_hat(k); conjugate symmetry is applied for the implied half."""
        k = (int(k[0]), int(k[1]))
        _check_wavevector(self.spec, k)
        t = tables_for(self.spec)
        if k in t.index:
            return complex(self.data[t.index[k]])
        return complex(np.conj(self.data[t.index[(-k[0], -k[1])]]))

    def to_grid(self) -> np.ndarray:
        """Real field on the collocation grid, indexed ``grid[j1, j2]`` for x = 2pi*j/N."""
        return grid_from_coeffs(self.data[None], self.spec)[0].T.copy()

    def norm(self, s: float = 0.0) -> float:
        return sobolev_norm(self, s)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check_same(other)
        return SpectralField(self.spec, _freeze(self.data + other.data))

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check_same(other)
        return SpectralField(self.spec, _freeze(self.data - other.data))

    def __mul__(self, c: float) -> "SpectralField":
        return SpectralField(self.spec, _freeze(self.data * float(c)))

    __rmul__ = __mul__

    def _check_same(self, other: "SpectralField") -> None:
        if other.spec != self.spec:
            raise SpectralError("fields live on different torus discretizations")

    def allclose(self, other: "SpectralField", atol: float = 1e-12) -> bool:
        return self.spec == other.spec and bool(np.allclose(self.data, other.data, atol=atol))


@dataclass(frozen=True)
class VelocityField:
    """Divergence-free velocity, both components stored on the same half-spectrum."""

    spec: TorusSpec
    u1: np.ndarray
    u2: np.ndarray

    def divergence_max(self) -> float:
        """max_k |k . u_hat(k)|; exactly zero for Biot-Savart output."""
        t = tables_for(self.spec)
        return float(np.abs(t.k1 * self.u1 + t.k2 * self.u2).max())

    def component(self, i: int) -> SpectralField:
        return SpectralField(self.spec, _freeze((self.u1 if i == 1 else self.u2).copy()))


# ---------------------------------------------------------------------------
# batched grid transforms (shared with the integrator)
# ---------------------------------------------------------------------------

def grid_from_coeffs(W: np.ndarray, spec: TorusSpec) -> np.ndarray:
    """(B, M) half-spectrum coefficients -> (B, N, N) real grids in native [j2, j1] layout."""
    t = tables_for(spec)
    N = spec.grid_size
    A = np.zeros((W.shape[0], N, N // 2 + 1), dtype=complex)
    A[:, t.iy, t.ix] = W
    A[:, t.iy_conj, 0] = np.conj(W[:, t.zero_col])
    return _fft.irfft2(A, s=(N, N), workers=_FFT_WORKERS, norm="forward")


def coeffs_from_grid(grids: np.ndarray, spec: TorusSpec) -> np.ndarray:
    """(B, N, N) real grids (native layout) -> (B, M) retained half-spectrum coefficients."""
    t = tables_for(spec)
    F = _fft.rfft2(grids, workers=_FFT_WORKERS, norm="forward")
    return F[:, t.iy, t.ix]


class AdvectionKernel:
    """Pseudo-spectral evaluation of (K u) . grad w for batches of fields.

    Holds a reusable scatter buffer; not safe for concurrent use by several
    threads, so each worker owns its own instance.
    """

    def __init__(self, spec: TorusSpec):
        self.spec = spec
        self.t = tables_for(spec)
        self._buf: np.ndarray | None = None

    def _buffer(self, B: int) -> np.ndarray:
        N = self.spec.grid_size
        if self._buf is None or self._buf.shape[0] < B:
            self._buf = np.zeros((B, 4, N, N // 2 + 1), dtype=complex)
        return self._buf[:B]

    def advect(self, U: np.ndarray, W: np.ndarray) -> np.ndarray:
        """B(K u, w) = (K u) . grad w for coefficient batches U, W of shape (B, M)."""
        t, N = self.t, self.spec.grid_size
        B = W.shape[0]
        keep = t.dealias_keep
        fields = np.empty((B, 4, t.n_modes), dtype=complex)
        fields[:, 0] = np.where(keep, U * t.vel1, 0.0)
        fields[:, 1] = np.where(keep, U * t.vel2, 0.0)
        fields[:, 2] = np.where(keep, W * t.grad1, 0.0)
        fields[:, 3] = np.where(keep, W * t.grad2, 0.0)
        A = self._buffer(B)
        A[:, :, t.iy, t.ix] = fields
        A[:, :, t.iy_conj, 0] = np.conj(fields[:, :, t.zero_col])
        g = _fft.irfft2(A.reshape(B * 4, N, N // 2 + 1), s=(N, N), workers=_FFT_WORKERS,
                        norm="forward").reshape(B, 4, N, N)
        with np.errstate(invalid="ignore", over="ignore"):  # inf/nan flow to blow-up detection
            prod = g[:, 0] * g[:, 2] + g[:, 1] * g[:, 3]
        out = coeffs_from_grid(prod, self.spec)
        return np.where(keep, out, 0.0)

    def nonlinear(self, W: np.ndarray) -> np.ndarray:
        return self.advect(W, W)


# ---------------------------------------------------------------------------
# public spatial operators
# ---------------------------------------------------------------------------

def biot_savart(w: SpectralField) -> VelocityField:
    """Velocity recovered from vorticity: u_hat(k) = i k_perp w_hat(k) / |k|^2."""
    t = tables_for(w.spec)
    return VelocityField(w.spec, _freeze(t.vel1 * w.data), _freeze(t.vel2 * w.data))


def nonlinear_term(w: SpectralField) -> SpectralField:
    """B(K w, w) computed pseudo-spectrally with the dealiasing mask applied."""
    out = AdvectionKernel(w.spec).nonlinear(w.data[None])[0]
    return SpectralField(w.spec, _freeze(out))


def symmetrized_bracket(u: SpectralField, w: SpectralField) -> SpectralField:
    """B~(u, w) = -B(K u, w) - B(K w, u); bilinear and symmetric in (u, w)."""
    u._check_same(w)
    kern = AdvectionKernel(u.spec)
    out = -kern.advect(u.data[None], w.data[None])[0] - kern.advect(w.data[None], u.data[None])[0]
    return SpectralField(u.spec, _freeze(out))


def sobolev_norm(w: SpectralField, s: float = 0.0) -> float:
    """(sum_k |k|^{2s} |w_hat(k)|^2)^{1/2} over the full spectrum; s = 0 is the H-norm."""
    t = tables_for(w.spec)
    if s == 0.0:
        return float(np.sqrt(2.0 * np.sum(np.abs(w.data) ** 2)))
    return float(np.sqrt(2.0 * np.sum(t.ksq**s * np.abs(w.data) ** 2)))


def sobolev_norm_batch(W: np.ndarray, spec: TorusSpec, s: float = 0.0) -> np.ndarray:
    t = tables_for(spec)
    p = np.abs(W) ** 2
    if s != 0.0:
        p = p * t.ksq**s
    return np.sqrt(2.0 * p.sum(axis=-1))


def inner(u: SpectralField, w: SpectralField) -> float:
    """H inner product <u, w> = sum_k u_hat(k) conj(w_hat(k))."""
    u._check_same(w)
    return float(2.0 * np.real(np.sum(u.data * np.conj(w.data))))
