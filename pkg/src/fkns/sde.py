"""Time-stepping of the stochastic vorticity equation with a periodic time symbol.

The scheme is an exponential (Lawson) Euler-Maruyama step, exact on the stiff
diagonal viscous part:

    w'(k) = E w(k) + phi1(-nu |k|^2 dt) dt [f_hat(beta_t h)(k) - B_hat(k)]
            + E sum_i g_i_hat(k) dW_i,     E = exp(-nu |k|^2 dt),

with phi1(z) = (e^z - 1)/z.  Noise increments are applied after the
integrating factor; the 1-D chain oracles used in the eigen tests must copy
this discretization exactly.

Randomness is counter-based: an increment is a pure function of
(seed, stream, step index), so ensembles parallelize without shared state and
trajectories are bitwise reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .spectral import (
    AdvectionKernel,
    SpectralField,
    TorusSpec,
    _freeze,
    sobolev_norm_batch,
    tables_for,
)

TWO_PI = 2.0 * math.pi

#: stability budget for the explicit part; the viscous factor itself is exact
STABILITY_LIMIT = 16.0


class BlowUpError(RuntimeError):
    """Non-finite coefficients encountered: blow-up or a too-large time step."""

    def __init__(self, time: float):
        super().__init__(f"non-finite coefficients at t = {time:.6g}; reduce dt or amplitudes")
        self.time = time


def beta(h: float, t: float) -> float:
    """Circle rotation beta_t h = h + t reduced to [0, 2pi); idempotent at t = 0."""
    return float(np.remainder(h + t, TWO_PI))


@dataclass(frozen=True)
class TimeSymbol:
    """Point on the symbol circle indexing the phase of the periodic force."""

    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", beta(self.value, 0.0))

    def advance(self, t: float) -> "TimeSymbol":
        return TimeSymbol(beta(self.value, t))

    def __float__(self) -> float:
        return self.value


def _as_symbol_value(h) -> float:
    return h.value if isinstance(h, TimeSymbol) else beta(float(h), 0.0)


@dataclass(frozen=True)
class ForcingSpec:
    """Trigonometric-polynomial-in-time forcing f(t) = sum_m cos(mt) c_m + sin(mt) s_m.

    A finite trigonometric polynomial with H_2 coefficients is automatically
    2pi-periodic and Lipschitz in t.
    """

    spec: TorusSpec
    cos_terms: tuple[tuple[int, SpectralField], ...] = ()
    sin_terms: tuple[tuple[int, SpectralField], ...] = ()

    @staticmethod
    def zero(spec: TorusSpec) -> "ForcingSpec":
        return ForcingSpec(spec)

    @staticmethod
    def default(spec: TorusSpec, amplitude: float = 0.6) -> "ForcingSpec":
        """A (cos t * cos(x1+x2) + sin t * sin(2 x1))."""
        c = SpectralField.from_modes(spec, {(1, 1): 0.5 * amplitude})
        s = SpectralField.from_modes(spec, {(2, 0): -0.5j * amplitude})
        return ForcingSpec(spec, cos_terms=((1, c),), sin_terms=((1, s),))

    def eval_hat(self, phase) -> np.ndarray:
        """Forcing coefficients at symbol phase(s); scalar -> (M,), array (B,) -> (B, M)."""
        M = tables_for(self.spec).n_modes
        phase = np.asarray(phase, dtype=float)
        out = np.zeros(phase.shape + (M,), dtype=complex)
        for m, f in self.cos_terms:
            out += np.cos(m * phase)[..., None] * f.data
        for m, f in self.sin_terms:
            out += np.sin(m * phase)[..., None] * f.data
        return out

    def sup_norm(self, s: float = 0.0) -> float:
        """Upper bound for sup_t ||f(t)||_s."""
        return sum(f.norm(s) for _, f in self.cos_terms) + sum(f.norm(s) for _, f in self.sin_terms)

    @property
    def is_zero(self) -> bool:
        return not self.cos_terms and not self.sin_terms


@dataclass(frozen=True)
class NoiseSpec:
    """Degenerate noise: d independent Wiener directions with fixed smooth coefficient fields."""

    coefficients: tuple[SpectralField, ...]

    def __post_init__(self):
        if len(self.coefficients) < 1:
            raise ValueError("noise requires d >= 1 coefficient fields; use ForcingSpec-only runs for deterministic dynamics")
        for g in self.coefficients:
            if not np.any(g.data):
                raise ValueError("noise coefficient fields must be nonzero")

    @property
    def d(self) -> int:
        return len(self.coefficients)

    @staticmethod
    def default(spec: TorusSpec, sigma: float = 0.35) -> "NoiseSpec":
        """d = 4 single-mode-pair fields on (1,0), (0,1), (1,1), (-1,1), each of H-norm sigma."""
        modes = [(1, 0), (0, 1), (1, 1), (-1, 1)]
        gs = tuple(
            SpectralField.from_modes(spec, {k: 0.5 * sigma * (1.0 - 1.0j)}) for k in modes
        )
        return NoiseSpec(gs)

    def matrix(self, spec: TorusSpec) -> np.ndarray:
        """(d, M) stacked coefficient rows."""
        return np.stack([g.data for g in self.coefficients])

    def ambient_energy(self) -> float:
        """sum_i ||g_i||^2 (the paper's B_0)."""
        return float(sum(g.norm() ** 2 for g in self.coefficients))


@dataclass(frozen=True)
class SimulationParams:
    """Viscosity, step size and discretization; validated against the stability budget."""

    viscosity: float
    dt: float
    torus: TorusSpec
    include_nonlinearity: bool = True

    def __post_init__(self):
        if self.viscosity <= 0:
            raise ValueError("viscosity must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        stiff = self.dt * self.viscosity * self.torus.truncation_radius**2
        if stiff > STABILITY_LIMIT:
            raise ValueError(
                f"dt * nu * K^2 = {stiff:.3g} exceeds the stability budget {STABILITY_LIMIT}"
            )

    def n_steps(self, duration: float) -> int:
        n = round(duration / self.dt)
        if abs(n * self.dt - duration) > 1e-9 * max(1.0, abs(duration)):
            raise ValueError(f"duration {duration} is not a multiple of dt = {self.dt}")
        if n < 0:
            raise ValueError("duration must be non-negative")
        return n


# ---------------------------------------------------------------------------
# counter-based noise streams
# ---------------------------------------------------------------------------

_BLOCK = 256


def _entropy(seed: int, stream) -> tuple:
    if isinstance(stream, (tuple, list)):
        return (int(seed),) + tuple(int(s) for s in stream)
    return (int(seed), int(stream))


@dataclass
class NoisePath:
    """Lazily realized Gaussian increments keyed by (seed, stream, step index).

    Increments are standard normal scaled by sqrt(dt) externally; block i is
    drawn from a Philox generator keyed by (seed, stream, i), so the value at
    a given step index never depends on how much of the path is realized.
    """

    seed: int
    stream: int | tuple = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def block(self, i: int, d: int) -> np.ndarray:
        key = (i, d)
        if key not in self._cache:
            ss = np.random.SeedSequence(entropy=_entropy(self.seed, self.stream) + (int(i),))
            g = np.random.Generator(np.random.Philox(ss))
            self._cache[key] = g.standard_normal((_BLOCK, d))
        return self._cache[key]

    def increment(self, step: int, d: int) -> np.ndarray:
        return self.block(step // _BLOCK, d)[step % _BLOCK]


class EnsembleIncrements:
    """Standard-normal increments for a batch of paths, one stream per path.

    Path i in the batch uses stream ``(purpose..., stream0 + i)``; blocks are
    realized per path, so chunked execution yields bitwise-identical draws
    regardless of worker decomposition.
    """

    def __init__(self, seed: int, purpose: tuple, stream0: int, n_paths: int, d: int):
        self.seed, self.purpose, self.stream0 = int(seed), tuple(purpose), int(stream0)
        self.n, self.d = int(n_paths), int(d)
        self._blocks: dict[int, np.ndarray] = {}

    def _block(self, i: int) -> np.ndarray:
        if i not in self._blocks:
            self._blocks.clear()  # keep at most one realized block
            rows = np.empty((self.n, _BLOCK, self.d))
            for p in range(self.n):
                ss = np.random.SeedSequence(
                    entropy=(self.seed,) + self.purpose + (self.stream0 + p, i)
                )
                g = np.random.Generator(np.random.Philox(ss))
                rows[p] = g.standard_normal((_BLOCK, self.d))
            self._blocks[i] = rows
        return self._blocks[i]

    def step(self, r: int) -> np.ndarray:
        return self._block(r // _BLOCK)[:, r % _BLOCK, :]


def derived_rng(seed: int, purpose: tuple) -> np.random.Generator:
    """Deterministic auxiliary generator (resampling, probe draws) keyed off the seed ledger."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=(int(seed),) + tuple(purpose))))


# ---------------------------------------------------------------------------
# integrator
# ---------------------------------------------------------------------------

class Integrator:
    """Precomputed exponential-Euler stepping of coefficient batches."""

    def __init__(self, params: SimulationParams, forcing: ForcingSpec, noise: NoiseSpec | None):
        self.params = params
        self.forcing = forcing
        self.noise = noise
        t = tables_for(params.torus)
        a = params.viscosity * t.ksq * params.dt
        self.decay = np.exp(-a)
        self.phidt = -np.expm1(-a) / (params.viscosity * t.ksq)  # phi1(-a) * dt
        self.noise_matrix = noise.matrix(params.torus) if noise is not None else None
        self.sqrt_dt = math.sqrt(params.dt)
        self.kernel = AdvectionKernel(params.torus) if params.include_nonlinearity else None

    @property
    def d(self) -> int:
        return 0 if self.noise is None else self.noise.d

    def step_batch(self, W: np.ndarray, phases: np.ndarray | float, dW: np.ndarray | None) -> np.ndarray:
        """One step for all paths; ``phases`` are the symbol values beta_t h at the step start."""
        out = self.decay * W
        if self.kernel is not None:
            out -= self.phidt * self.kernel.nonlinear(W)
        if not self.forcing.is_zero:
            out += self.phidt * self.forcing.eval_hat(phases)
        if dW is not None and self.noise_matrix is not None:
            out += self.decay * (dW @ self.noise_matrix)
        return out


def advance_batch(
    W0: np.ndarray,
    h0,
    duration: float,
    integ: Integrator,
    increments: EnsembleIncrements | None,
    on_state: Callable[[int, float, np.ndarray], None] | None = None,
    t_origin: float = 0.0,
    check_every: int = 16,
) -> np.ndarray:
    """Advance a (B, M) coefficient batch over ``duration``, reporting states at step times.

    ``h0`` may be a scalar symbol or a per-path array; the forcing phase at
    step r is beta(h0, t_origin + r dt).  ``on_state`` is called at every step
    time r = 0..n with the current states (read-only use).
    """
    params = integ.params
    n = params.n_steps(duration)
    W = np.array(W0, dtype=complex)
    h0 = np.asarray(h0, dtype=float)
    if on_state is not None:
        on_state(0, 0.0, W)
    for r in range(n):
        phases = np.remainder(h0 + (t_origin + r * params.dt), TWO_PI)
        dW = integ.sqrt_dt * increments.step(r) if increments is not None else None
        W = integ.step_batch(W, phases, dW)
        if (r % check_every == check_every - 1 or r == n - 1) and not np.all(np.isfinite(W)):
            raise BlowUpError(t_origin + (r + 1) * params.dt)
        if on_state is not None:
            on_state(r + 1, (r + 1) * params.dt, W)
    return W


# ---------------------------------------------------------------------------
# public trajectory interface
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """States at saved step times plus per-step observable series."""

    spec: TorusSpec
    times: np.ndarray           # (n_saved,) absolute times
    coeffs: np.ndarray          # (n_saved, M)
    observables: dict[str, np.ndarray]
    observable_times: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    def field(self, i: int) -> SpectralField:
        return SpectralField(self.spec, _freeze(self.coeffs[i].copy()))

    @property
    def terminal(self) -> SpectralField:
        return self.field(len(self.times) - 1)

    def __iter__(self):
        return ((float(t), self.field(i)) for i, t in enumerate(self.times))


def step(
    w: SpectralField,
    t: float,
    h,
    params: SimulationParams,
    forcing: ForcingSpec,
    noise: NoiseSpec | None,
    dW: np.ndarray | None,
) -> SpectralField:
    """Single exponential-integrator step from time t with symbol h; dW are N(0, dt) draws."""
    integ = Integrator(params, forcing, noise)
    if noise is not None:
        dW = np.asarray(dW, dtype=float).reshape(1, noise.d)
    phase = beta(_as_symbol_value(h), t)
    out = integ.step_batch(w.data[None], phase, dW if noise is not None else None)[0]
    if not np.all(np.isfinite(out)):
        raise BlowUpError(t + params.dt)
    return SpectralField(w.spec, _freeze(out))


def solve(
    w0: SpectralField,
    s: float,
    t: float,
    h,
    path: NoisePath | None,
    params: SimulationParams,
    forcing: ForcingSpec,
    noise: NoiseSpec | None = None,
    save_every: int = 1,
    observables: Mapping[str, Callable[[np.ndarray, TorusSpec], np.ndarray]] | None = None,
) -> Trajectory:
    """Integrate from time s to t >= s with symbol h, consuming ``path`` increments from index 0.

    The forcing phase protocol is beta(beta(h, s), r dt), so that with shared
    increments the translation identity
    solve(w0, s, s+t, h) == solve(w0, 0, t, beta_s h) holds bitwise.
    """
    if t < s:
        raise ValueError("t must be >= s")
    n = params.n_steps(t - s)
    phi0 = beta(_as_symbol_value(h), s)
    integ = Integrator(params, forcing, noise)
    d = integ.d
    saved_idx = list(range(0, n + 1, max(1, save_every)))
    if saved_idx[-1] != n:
        saved_idx.append(n)
    saved_set = set(saved_idx)
    coeffs = np.empty((len(saved_idx), w0.data.shape[0]), dtype=complex)
    obs = {name: np.empty(n + 1) for name in (observables or {})}
    pos = {r: i for i, r in enumerate(saved_idx)}

    def on_state(r: int, t_rel: float, W: np.ndarray) -> None:
        if r in saved_set:
            coeffs[pos[r]] = W[0]
        for name, fn in (observables or {}).items():
            obs[name][r] = fn(W, params.torus)[0]

    class _PathAdapter:
        def step(self, r: int) -> np.ndarray:
            return path.increment(r, d)[None]

    incs = _PathAdapter() if (noise is not None and path is not None) else None
    advance_batch(w0.data[None], phi0, t - s, integ, incs, on_state=on_state)
    times = s + params.dt * np.asarray(saved_idx, dtype=float)
    return Trajectory(params.torus, times, coeffs, obs, s + params.dt * np.arange(n + 1))


def homogenized_step(
    pair: tuple[SpectralField, TimeSymbol],
    t: float,
    path: NoisePath | None,
    params: SimulationParams,
    forcing: ForcingSpec,
    noise: NoiseSpec | None = None,
) -> tuple[SpectralField, TimeSymbol]:
    """Advance the coupled homogeneous Markov state (w, h) by t; the symbol moves exactly mod 2pi.

    Durations that are not step multiples are integrated as whole steps plus a
    single shorter final step (the exponential integrator is well defined at
    any step size); the symbol component never sees the step grid.
    """
    import dataclasses

    w, h = pair
    h = h if isinstance(h, TimeSymbol) else TimeSymbol(float(h))
    if t == 0.0:
        return w, h
    n = int(math.floor(t / params.dt + 1e-12))
    whole = n * params.dt
    rem = t - whole
    out = w
    if n > 0:
        out = solve(out, 0.0, whole, h, path, params, forcing, noise,
                    save_every=max(1, n)).terminal
    if rem > 1e-12:
        p_rem = dataclasses.replace(params, dt=rem)
        dW = path.increment(n, noise.d) * math.sqrt(rem) if (noise is not None and path is not None) else None
        integ = Integrator(p_rem, forcing, noise)
        phase = beta(h.value, whole)
        res = integ.step_batch(out.data[None], phase, dW[None] if dW is not None else None)[0]
        if not np.all(np.isfinite(res)):
            raise BlowUpError(t)
        out = SpectralField(params.torus, _freeze(res))
    return out, h.advance(t)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def energy_budget_residual(
    w0: SpectralField,
    h,
    duration: float,
    params: SimulationParams,
    forcing: ForcingSpec,
) -> float:
    """Max defect of d/dt (||w||^2 / 2) = -nu ||w||_1^2 + <f, w> on a deterministic run.

    The nonlinearity conserves the H-norm, so the defect measures the
    discretization error only; it shrinks at first order in dt.
    """
    obs = {
        "energy": lambda W, spec: 0.5 * sobolev_norm_batch(W, spec) ** 2,
        "enstrophy": lambda W, spec: sobolev_norm_batch(W, spec, 1.0) ** 2,
    }
    traj = solve(w0, 0.0, duration, h, None, params, forcing, None, save_every=1, observables=obs)
    e = traj.observables["energy"]
    z = traj.observables["enstrophy"]
    times = traj.observable_times
    phases = np.remainder(_as_symbol_value(h) + times, TWO_PI)
    F = forcing.eval_hat(phases)
    fw = 2.0 * np.real(np.sum(F * np.conj(traj.coeffs), axis=1))
    dt = params.dt
    lhs = np.diff(e) / dt
    rhs = 0.5 * (-params.viscosity * z[:-1] + fw[:-1]) + 0.5 * (-params.viscosity * z[1:] + fw[1:])
    return float(np.abs(lhs - rhs).max())


def ensemble_square_norm(
    w0: SpectralField,
    h,
    t: float,
    n_paths: int,
    params: SimulationParams,
    forcing: ForcingSpec,
    noise: NoiseSpec,
    seed: int,
    moment: int = 1,
    purpose: tuple = (0,),
) -> tuple[float, float]:
    """Monte Carlo mean and standard error of ||Phi_{0,t,h}(w0)||^{2m}."""
    integ = Integrator(params, forcing, noise)
    incs = EnsembleIncrements(seed, purpose, 0, n_paths, noise.d)
    W0 = np.broadcast_to(w0.data, (n_paths, w0.data.shape[0]))
    WT = advance_batch(W0, _as_symbol_value(h), t, integ, incs)
    vals = sobolev_norm_batch(WT, params.torus) ** (2 * moment)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths))
