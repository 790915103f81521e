"""Construction of the eigen-triple: eigenmeasure family, eigenvalue density, eigenfunction.

The eigenmeasure family is the fixed point of the normalized pullback update,
realized as a sequential Monte Carlo sweep over a symbol grid: the ensemble
one time unit upstream on the circle is pushed forward with path weights,
renormalized to unit mass, and systematically resampled.  Upstream symbols
fall between grid nodes, so the source is the mass-interpolated mixture of
the two bracketing node ensembles; the evolution itself always runs at the
exact upstream symbol, and grid-refinement agreement is the check on the
interpolation bias.

The eigenvalue density is read off the converged ensembles through the
integral representation lambda(h) = <V(., h), Gamma(h)>; the eigenfunction is
the Cesaro average of normalized operator iterates of the constant function,
rescaled so the eigenmeasure integrates it to one.  Both carry Monte Carlo
errors, and every identity the theory supplies (cocycle, normalization,
conservativity of the transformed Markov operator, stability trends) is
re-estimated with fresh paths as a residual diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .spectral import SpectralField, TorusSpec, _freeze
from .sde import (
    TWO_PI,
    EnsembleIncrements,
    ForcingSpec,
    Integrator,
    NoiseSpec,
    SimulationParams,
    advance_batch,
    beta,
    derived_rng,
    _as_symbol_value,
)
from .feynman_kac import (
    EnsembleCollapseError,
    PotentialDictionary,
    PotentialSpec,
    WeightedEnsemble,
    concat_ensembles,
    full_log_weights,
    one,
    weighted_paths,
)

PURPOSE_PULLBACK = 2
PURPOSE_KB = 3
PURPOSE_EIGEN_DIAG = 4

#: cap on simultaneously advanced paths (bounds the FFT scatter buffer)
MAX_BATCH = 1024


class EigenfunctionPositivityError(RuntimeError):
    """An eigenfunction evaluation came out non-positive; the table is corrupted."""


@dataclass(frozen=True)
class SymbolGrid:
    """Uniform nodes on the symbol circle carrying the normalized invariant measure."""

    n_h: int

    def __post_init__(self):
        if self.n_h < 1:
            raise ValueError("n_h must be >= 1")

    @property
    def nodes(self) -> np.ndarray:
        return TWO_PI * np.arange(self.n_h) / self.n_h

    @property
    def spacing(self) -> float:
        return TWO_PI / self.n_h

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n_h, 1.0 / self.n_h)

    def bracketing(self, h: float) -> tuple[int, int, float]:
        """Indices of the nodes bracketing symbol h and the interpolation fraction."""
        x = beta(h, 0.0) / self.spacing
        j0 = int(math.floor(x)) % self.n_h
        return j0, (j0 + 1) % self.n_h, x - math.floor(x)


class PeriodicCurve:
    """Periodic linear interpolant on uniform nodes with an exact running integral."""

    def __init__(self, n_h: int, values: np.ndarray):
        self.n = int(n_h)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (self.n,):
            raise ValueError("one value per grid node required")
        self.delta = TWO_PI / self.n
        nxt = np.roll(self.values, -1)
        seg = 0.5 * self.delta * (self.values + nxt)
        self.cum = np.concatenate([[0.0], np.cumsum(seg)])  # cum[n] = full-period integral

    def value(self, h) -> np.ndarray | float:
        x = np.remainder(np.asarray(h, dtype=float), TWO_PI) / self.delta
        j = np.minimum(x.astype(int), self.n - 1)
        f = x - j
        v0 = self.values[j]
        v1 = self.values[(j + 1) % self.n]
        out = (1.0 - f) * v0 + f * v1
        return float(out) if np.isscalar(h) or np.asarray(h).ndim == 0 else out

    def period_mean(self) -> float:
        return float(self.cum[self.n] / TWO_PI)

    def _antiderivative(self, h: float) -> float:
        x = np.remainder(h, TWO_PI) / self.delta
        j = min(int(x), self.n - 1)
        f = x - j
        v0, v1 = self.values[j], self.values[(j + 1) % self.n]
        return float(self.cum[j] + self.delta * (v0 * f + 0.5 * (v1 - v0) * f * f))

    def integral(self, h: float, t: float) -> float:
        """int_0^t value(beta_r h) dr, exact on the interpolant."""
        if t < 0:
            raise ValueError("t must be >= 0")
        per = float(self.cum[self.n])
        n_whole = int(math.floor(t / TWO_PI))
        rem = t - n_whole * TWO_PI
        if rem >= TWO_PI:
            n_whole, rem = n_whole + 1, rem - TWO_PI
        a = self._antiderivative(h)
        b_raw = np.remainder(h, TWO_PI) + rem
        b = self._antiderivative(b_raw) + (per if b_raw >= TWO_PI else 0.0)
        return n_whole * per + (b - a)


# ---------------------------------------------------------------------------
# observables used as the metrizing family for ensemble comparisons
# ---------------------------------------------------------------------------

def metrizing_family(dictionary: PotentialDictionary) -> list[Callable[[np.ndarray, TorusSpec], np.ndarray]]:
    """Squashed dictionary observables: bounded Lipschitz functions separating visited states."""
    fns = []
    seen = set()
    for term in dictionary.terms:
        key = (term.kind, term.wavevector, term.squash_scale)
        if term.kind == "const" or key in seen:
            continue
        seen.add(key)
        fns.append(term.squashed)
    return fns


def bl_distance(a: WeightedEnsemble, b: WeightedEnsemble, observables) -> float:
    """Bounded-Lipschitz surrogate distance: max observable-mean discrepancy."""
    return max(abs(a.mean(f) - b.mean(f)) for f in observables)


def bl_noise_floor(a: WeightedEnsemble, b: WeightedEnsemble, observables, rng: np.random.Generator, n_boot: int = 48) -> float:
    """Bootstrap scale of the distance estimate under resampling of both ensembles."""
    floors = []
    for f in observables:
        va, vb = f(a.coeffs, a.spec), f(b.coeffs, b.spec)
        pa, pb = a.weights / a.total_mass, b.weights / b.total_mass
        reps = np.empty(n_boot)
        for r in range(n_boot):
            ia = rng.choice(a.n, size=a.n, p=pa)
            ib = rng.choice(b.n, size=b.n, p=pb)
            reps[r] = va[ia].mean() - vb[ib].mean()
        floors.append(reps.std(ddof=1))
    return float(max(floors))


# ---------------------------------------------------------------------------
# the pullback sweep
# ---------------------------------------------------------------------------

@dataclass
class PullbackResult:
    grid: SymbolGrid
    ensembles: list[WeightedEnsemble]       # normalized to mass one, one per node
    log_sweep_mass: np.ndarray              # (n_sweeps, n_h) log one-sweep masses
    potential_means: np.ndarray             # (n_sweeps, n_h) centered <V, Gamma_j> per sweep
    collected: dict[str, np.ndarray]        # user observables, (n_sweeps, n_h) each
    bl_history: list[float]
    converged_at: int | None
    min_ess: float

    def trailing_window(self, trailing: int | None = None) -> slice:
        n_done = self.potential_means.shape[0]
        L = max(2, n_done // 3) if trailing is None else min(trailing, n_done)
        return slice(n_done - L, n_done)

    def trailing_stats(self, series: np.ndarray, trailing: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Mean and standard error per node over the trailing sweep window.

        Successive sweeps are correlated on the mixing scale, so the error
        uses an effective count of half the window length.
        """
        win = series[self.trailing_window(trailing)]
        L = win.shape[0]
        mean = win.mean(axis=0)
        if L < 2:
            return mean, np.full_like(mean, np.inf)
        se = win.std(axis=0, ddof=1) / math.sqrt(max(L / 2.0, 1.0))
        return mean, se


def _mixture_source(
    ensembles: Sequence[WeightedEnsemble], grid: SymbolGrid, symbol: float
) -> WeightedEnsemble:
    j0, j1, alpha = grid.bracketing(symbol)
    if alpha == 0.0 or j0 == j1:
        return ensembles[j0].normalized()
    return concat_ensembles(
        ensembles[j0].normalized().scaled(1.0 - alpha),
        ensembles[j1].normalized().scaled(alpha),
    )


def _seed_cloud(
    n_particles: int,
    params: SimulationParams,
    forcing: ForcingSpec,
    noise: NoiseSpec,
    seed: int,
    burn: float = 4.0,
) -> np.ndarray:
    """Initial particle cloud: paths of the unweighted dynamics started at rest."""
    integ = Integrator(params, forcing, noise)
    incs = EnsembleIncrements(seed, (PURPOSE_PULLBACK, 0), 0, n_particles, noise.d)
    M = forcing.eval_hat(0.0).shape[-1]
    return advance_batch(np.zeros((n_particles, M), complex), 0.0, burn, integ, incs)


def eigenmeasure_pullback(
    potential: PotentialSpec,
    grid: SymbolGrid,
    n_particles: int,
    n_iters: int = 64,
    resample_policy: str = "systematic",
    *,
    params: SimulationParams,
    forcing: ForcingSpec,
    noise: NoiseSpec,
    seed: int,
    init: Sequence[WeightedEnsemble] | None = None,
    observables: Sequence[Callable] | None = None,
    early_stop: bool = True,
    min_iters: int = 12,
    sweep_duration: float = 1.0,
    collect: dict[str, Callable] | None = None,
) -> PullbackResult:
    """Iterate the normalized pullback update until the node family stabilizes.

    Every sweep advances each node's mixture source one unit of time from the
    exact upstream symbol, multiplies in the path weights, renormalizes and
    resamples.  Resampling randomness and path increments are keyed by
    (seed, sweep, node) only, so two potentials differing by a constant see
    identical particle systems.
    """
    if resample_policy != "systematic":
        raise ValueError("only systematic resampling is implemented")
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    n_h = grid.n_h
    if observables is None:
        observables = metrizing_family(PotentialDictionary.default(params.torus))
    integ = Integrator(params, forcing, noise)
    nodes = grid.nodes

    if init is not None:
        ensembles = [e.normalized() for e in init]
    else:
        cloud = _seed_cloud(n_particles, params, forcing, noise, seed)
        ensembles = [
            WeightedEnsemble(params.torus, cloud, np.full(n_particles, 1.0 / n_particles))
            for _ in range(n_h)
        ]

    n_steps_sweep = params.n_steps(sweep_duration)
    log_mass = np.zeros((n_iters, n_h))
    pot_means = np.zeros((n_iters, n_h))
    collected = {name: np.zeros((n_iters, n_h)) for name in (collect or {})}
    bl_history: list[float] = []
    converged_at: int | None = None
    min_ess = float(n_particles)

    for sweep in range(n_iters):
        sources = []
        for j in range(n_h):
            src_symbol = beta(nodes[j], -sweep_duration)
            mix = _mixture_source(ensembles, grid, src_symbol)
            rng = derived_rng(seed, (PURPOSE_PULLBACK, 1, sweep, j))
            sources.append(mix.resampled(n_particles, rng))
        W0 = np.vstack([s.coeffs for s in sources])
        phases0 = np.repeat([beta(nodes[j], -sweep_duration) for j in range(n_h)], n_particles)
        incs = EnsembleIncrements(seed, (PURPOSE_PULLBACK, 2, sweep), 0, n_h * n_particles, noise.d)
        WT, logGc, _ = weighted_paths(W0, phases0, sweep_duration, potential, integ, incs)

        new_ensembles = []
        for j in range(n_h):
            sl = slice(j * n_particles, (j + 1) * n_particles)
            lg = logGc[sl]
            m = lg.max()
            rel = np.exp(lg - m)
            log_mass[sweep, j] = (
                potential.offset * (n_steps_sweep * params.dt) + m + math.log(rel.mean())
            )
            ens = WeightedEnsemble(params.torus, WT[sl], rel / rel.sum())
            ess = ens.ess()
            min_ess = min(min_ess, ess)
            if ess < 2.0:
                raise EnsembleCollapseError(
                    f"ESS {ess:.2f} at sweep {sweep}, node {j}: potential too aggressive for n_particles"
                )
            pot_means[sweep, j] = ens.mean(
                lambda W, spec: potential.value_batch_centered(W, spec, nodes[j])
            )
            for name, fn in (collect or {}).items():
                collected[name][sweep, j] = ens.mean(fn)
            new_ensembles.append(ens)

        dist = max(bl_distance(new_ensembles[j], ensembles[j], observables) for j in range(n_h))
        bl_history.append(dist)
        ensembles = new_ensembles
        if early_stop and sweep + 1 >= min_iters and converged_at is None:
            rng = derived_rng(seed, (PURPOSE_PULLBACK, 3, sweep))
            j_worst = int(
                np.argmax([bl_distance(ensembles[j], sources[j], observables) for j in range(n_h)])
            )
            floor = bl_noise_floor(ensembles[j_worst], sources[j_worst], observables, rng)
            if dist < 2.0 * floor:
                converged_at = sweep + 1
                break

    n_done = len(bl_history)
    return PullbackResult(
        grid, ensembles, log_mass[:n_done], pot_means[:n_done],
        {k: v[:n_done] for k, v in collected.items()},
        bl_history, converged_at, min_ess,
    )


# ---------------------------------------------------------------------------
# eigenvalue estimates
# ---------------------------------------------------------------------------

def eigenvalue(potential: PotentialSpec, gamma: WeightedEnsemble, h) -> float:
    """Integral representation lambda(h) = <V(., h), Gamma(h)> on a normalized ensemble."""
    hv = _as_symbol_value(h)
    centered = gamma.mean(lambda W, spec: potential.value_batch_centered(W, spec, hv))
    return potential.offset + centered


def eigenvalue_with_error(potential: PotentialSpec, gamma: WeightedEnsemble, h) -> tuple[float, float]:
    hv = _as_symbol_value(h)
    m, se = gamma.mean_and_se(lambda W, spec: potential.value_batch_centered(W, spec, hv))
    return potential.offset + m, se


def ensemble_log_mass(
    start: WeightedEnsemble,
    duration: float,
    h,
    potential: PotentialSpec,
    *,
    params: SimulationParams,
    forcing: ForcingSpec,
    noise: NoiseSpec,
    seed: int,
    purpose: tuple,
    n_paths: int | None = None,
) -> tuple[float, float, WeightedEnsemble]:
    """Log total mass of the dual action applied to a normalized ensemble, with its SE.

    This is the t-unit operator-norm sample lambda_hat_{t,h}; the evolved
    weighted ensemble is returned for reuse.
    """
    integ = Integrator(params, forcing, noise)
    src = start.normalized()
    if n_paths is not None and n_paths != src.n:
        src = src.resampled(n_paths, derived_rng(seed, purpose + (99,)))
    out_parts = []
    logs = np.empty(src.n)
    n_steps = params.n_steps(duration)
    for lo in range(0, src.n, MAX_BATCH):
        sl = slice(lo, min(lo + MAX_BATCH, src.n))
        incs = EnsembleIncrements(seed, purpose, lo, sl.stop - lo, noise.d)
        WT, logGc, _ = weighted_paths(src.coeffs[sl], _as_symbol_value(h), duration, potential, integ, incs)
        logs[sl] = full_log_weights(potential, logGc, n_steps, params.dt)
        out_parts.append(WT)
    WT = np.vstack(out_parts)
    w = src.weights / src.total_mass
    m = logs.max()
    rel = np.exp(logs - m)
    mass = float(np.sum(w * rel))
    log_mass = m + math.log(mass)
    var = float(np.sum(w * (rel - mass) ** 2))
    se_log = math.sqrt(max(var, 0.0) / max(src.ess(), 1.0)) / mass
    evolved = WeightedEnsemble(params.torus, WT, src.weights * np.exp(logs))
    return log_mass, se_log, evolved


# ---------------------------------------------------------------------------
# Krylov-Bogolyubov eigenfunction
# ---------------------------------------------------------------------------

@dataclass
class KBEigenfunction:
    """Evaluator for the eigenfunction via Cesaro averages of normalized iterates.

    The value at (w, h) is the running average over l < k_terms of the
    weighted-path mean of the constant function, each term divided by the
    interpolated eigenvalue factor exp(int_0^l lambda(beta_r h) dr).  A
    per-node rescale enforces the unit normalization against the eigenmeasure
    family; off-grid symbols interpolate the rescale periodically.
    """

    potential: PotentialSpec
    params: SimulationParams
    forcing: ForcingSpec
    noise: NoiseSpec
    lambda_curve: PeriodicCurve
    k_terms: int
    n_paths: int
    seed: int
    scale_curve: PeriodicCurve | None = None

    def _scale(self, h: float) -> float:
        return 1.0 if self.scale_curve is None else float(self.scale_curve.value(h))

    def raw_eval(
        self,
        points: np.ndarray,
        h,
        *,
        k_terms: int | None = None,
        n_paths: int | None = None,
        purpose: tuple = (PURPOSE_KB,),
    ) -> tuple[np.ndarray, np.ndarray]:
        """Unscaled KB averages and per-point standard errors at a common symbol h."""
        k = self.k_terms if k_terms is None else int(k_terms)
        npth = self.n_paths if n_paths is None else int(n_paths)
        if k < 1:
            raise ValueError("k_terms must be >= 1")
        hv = _as_symbol_value(h)
        params = self.params
        steps_per_unit = params.n_steps(1.0)
        marks = [l * steps_per_unit for l in range(k)]
        log_lam = np.array([self.lambda_curve.integral(hv, float(l)) for l in range(k)])
        B = points.shape[0]
        integ = Integrator(params, self.forcing, self.noise)
        vals = np.empty(B)
        ses = np.empty(B)
        reps_per_chunk = max(1, MAX_BATCH // npth)
        for lo in range(0, B, reps_per_chunk):
            hi = min(lo + reps_per_chunk, B)
            Wrep = np.repeat(points[lo:hi], npth, axis=0)
            incs = EnsembleIncrements(self.seed, purpose, lo * npth, Wrep.shape[0], self.noise.d)
            if k > 1:
                _, _, prefixes = weighted_paths(
                    Wrep, hv, float(k - 1), self.potential, integ, incs, record_steps=marks
                )
            else:
                prefixes = {0: np.zeros(Wrep.shape[0])}
            terms = np.empty((k, Wrep.shape[0]))
            for l in range(k):
                lg = prefixes[l * steps_per_unit] + self.potential.offset * (l * steps_per_unit * params.dt)
                terms[l] = np.exp(lg - log_lam[l])
            per_path = terms.mean(axis=0).reshape(hi - lo, npth)
            vals[lo:hi] = per_path.mean(axis=1)
            ses[lo:hi] = per_path.std(axis=1, ddof=1) / math.sqrt(npth) if npth > 1 else 0.0
        return vals, ses

    def evaluate_batch(self, points: np.ndarray, h, **kw) -> tuple[np.ndarray, np.ndarray]:
        vals, ses = self.raw_eval(points, h, **kw)
        s = self._scale(_as_symbol_value(h))
        return s * vals, s * ses

    def evaluate(self, w: SpectralField, h, **kw) -> tuple[float, float]:
        v, s = self.evaluate_batch(w.data[None], h, **kw)
        return float(v[0]), float(s[0])

    def extension_eval(
        self, w: SpectralField, h, *, n_paths: int = 64, purpose: tuple = (PURPOSE_KB, 7)
    ) -> tuple[float, float]:
        """One-step extension rule: pull the value back through a single weighted unit step."""
        hv = _as_symbol_value(h)
        params = self.params
        integ = Integrator(params, self.forcing, self.noise)
        incs = EnsembleIncrements(self.seed, purpose, 0, n_paths, self.noise.d)
        W0 = np.broadcast_to(w.data, (n_paths, w.data.shape[0]))
        WT, logGc, _ = weighted_paths(W0, hv, 1.0, self.potential, integ, incs)
        logG = full_log_weights(self.potential, logGc, params.n_steps(1.0), params.dt)
        f_inner, _ = self.evaluate_batch(WT, beta(hv, 1.0), purpose=purpose + (1,))
        lam1 = math.exp(self.lambda_curve.integral(hv, 1.0))
        samples = np.exp(logG) * f_inner / lam1
        return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(n_paths))


# ---------------------------------------------------------------------------
# the assembled estimate
# ---------------------------------------------------------------------------

@dataclass
class EigenTripleEstimate:
    """Per-node eigenmeasure ensembles, eigenvalue table, and eigenfunction evaluator."""

    potential: PotentialSpec
    grid: SymbolGrid
    gammas: list[WeightedEnsemble]
    lam: np.ndarray
    lam_se: np.ndarray
    lambda_curve: PeriodicCurve
    eigf: KBEigenfunction
    params: SimulationParams
    forcing: ForcingSpec
    noise: NoiseSpec
    seed: int
    pullback: PullbackResult

    def lambda_at(self, h) -> float:
        return float(self.lambda_curve.value(_as_symbol_value(h)))

    def log_lambda(self, h, t: float) -> float:
        """log lambda_{t,h} through the integral representation."""
        return self.lambda_curve.integral(_as_symbol_value(h), t)

    def gamma_at(
        self,
        h,
        n_refresh: int = 6,
        *,
        purpose: tuple = (PURPOSE_EIGEN_DIAG, 0),
    ) -> WeightedEnsemble:
        """Eigenmeasure estimate at an arbitrary symbol by a fresh exact-symbol pullback chain.

        Starts from the grid family upstream and applies n_refresh normalized
        weighted unit steps ending exactly at h; pullback stability makes the
        result insensitive to the initialization.
        """
        hv = _as_symbol_value(h)
        n = self.gammas[0].n
        integ = Integrator(self.params, self.forcing, self.noise)
        ens = _mixture_source(self.gammas, self.grid, beta(hv, -float(n_refresh)))
        for r in range(n_refresh, 0, -1):
            rng = derived_rng(self.seed, purpose + (r, 0))
            src = ens.normalized().resampled(n, rng)
            incs = EnsembleIncrements(self.seed, purpose + (r, 1), 0, n, self.noise.d)
            WT, logGc, _ = weighted_paths(
                src.coeffs, beta(hv, -float(r)), 1.0, self.potential, integ, incs
            )
            rel = np.exp(logGc - logGc.max())
            ens = WeightedEnsemble(self.params.torus, WT, rel / rel.sum())
        return ens

    def equilibrium_term_means(self, dictionary: PotentialDictionary, *, kb_paths: int = 8) -> np.ndarray:
        """<phi_j, mu_V> for the dictionary terms, mu_V = F Gamma m (the equilibrium state)."""
        sums = np.zeros(dictionary.n_terms)
        norm = 0.0
        for j, hj in enumerate(self.grid.nodes):
            g = self.gammas[j]
            fvals, _ = self.eigf.evaluate_batch(
                g.coeffs, hj, n_paths=kb_paths, purpose=(PURPOSE_EIGEN_DIAG, 5, j)
            )
            p = g.weights / g.total_mass * fvals
            tv = np.stack([t.value(g.coeffs, g.spec, hj) for t in dictionary.terms], axis=-1)
            sums += p @ tv
            norm += p.sum()
        return sums / norm


def build_eigen_triple(
    potential: PotentialSpec,
    grid: SymbolGrid,
    *,
    params: SimulationParams,
    forcing: ForcingSpec,
    noise: NoiseSpec,
    seed: int,
    n_particles: int = 64,
    n_iters: int = 48,
    kb_terms: int = 6,
    kb_paths: int = 16,
    kb_norm_paths: int = 8,
    init: Sequence[WeightedEnsemble] | None = None,
    early_stop: bool = True,
    min_iters: int = 12,
    trailing: int | None = None,
    collect: dict[str, Callable] | None = None,
) -> EigenTripleEstimate:
    """Run the pullback, read off the eigenvalue table, and normalize the eigenfunction.

    The eigenvalue table averages the integral-representation estimates over a
    trailing window of sweeps; the sweep-to-sweep spread is the quoted error,
    which honestly reflects the particle system's fixed-point fluctuation.
    """
    pb = eigenmeasure_pullback(
        potential, grid, n_particles, n_iters,
        params=params, forcing=forcing, noise=noise, seed=seed,
        init=init, early_stop=early_stop, min_iters=min_iters, collect=collect,
    )
    centered, lam_se = pb.trailing_stats(pb.potential_means, trailing)
    lam = potential.offset + centered
    curve = PeriodicCurve(grid.n_h, lam)
    eigf = KBEigenfunction(potential, params, forcing, noise, curve, kb_terms, kb_paths, seed)
    scales = np.empty(grid.n_h)
    for j, hj in enumerate(grid.nodes):
        g = pb.ensembles[j]
        vals, _ = eigf.raw_eval(g.coeffs, hj, n_paths=kb_norm_paths, purpose=(PURPOSE_KB, 1, j))
        mean_f = float(np.sum(g.weights / g.total_mass * vals))
        if mean_f <= 0.0:
            raise EigenfunctionPositivityError(f"normalization integral non-positive at node {j}")
        scales[j] = 1.0 / mean_f
    eigf.scale_curve = PeriodicCurve(grid.n_h, scales)
    return EigenTripleEstimate(
        potential, grid, pb.ensembles, lam, lam_se, curve, eigf,
        params, forcing, noise, seed, pb,
    )


def eigenfunction_kb(
    triple: EigenTripleEstimate,
    h,
    points: Sequence[SpectralField],
    k_terms: int | None = None,
    *,
    n_paths: int | None = None,
    purpose: tuple = (PURPOSE_KB, 2),
) -> list[tuple[float, float]]:
    """Normalized eigenfunction values (with Monte Carlo errors) at evaluation points."""
    P = np.stack([p.data for p in points])
    vals, ses = triple.eigf.evaluate_batch(P, h, k_terms=k_terms, n_paths=n_paths, purpose=purpose)
    return list(zip(vals.tolist(), ses.tolist()))


# ---------------------------------------------------------------------------
# residual diagnostics
# ---------------------------------------------------------------------------

def eigenvalue_cocycle_residual(
    triple: EigenTripleEstimate,
    m_steps: int,
    l_steps: int,
    *,
    n_paths: int = 96,
    seed_offset: int = 0,
) -> dict:
    """Fresh-path check of lambda_{m+l,h} = lambda_{m, beta_l h} lambda_{l,h} at every node.

    All three factors are estimated with independent paths, so the residual
    measures estimator noise; it is reported relative together with the joint
    standard error.
    """
    if m_steps < 0 or l_steps < 0:
        raise ValueError("m and l must be >= 0")
    rows = []
    kw = dict(params=triple.params, forcing=triple.forcing, noise=triple.noise, seed=triple.seed)
    for j, hj in enumerate(triple.grid.nodes):
        g = triple.gammas[j]
        tag = (PURPOSE_EIGEN_DIAG, 1, seed_offset, j)
        if m_steps + l_steps == 0:
            rows.append({"node": j, "log_residual": 0.0, "se_joint": 0.0, "relative_residual": 0.0})
            continue
        log_ml, se_ml, _ = ensemble_log_mass(
            g, float(m_steps + l_steps), hj, triple.potential, purpose=tag + (0,), n_paths=n_paths, **kw
        )
        if l_steps == 0:
            log_l, se_l = 0.0, 0.0
        else:
            log_l, se_l, _ = ensemble_log_mass(
                g, float(l_steps), hj, triple.potential, purpose=tag + (1,), n_paths=n_paths, **kw
            )
        if m_steps == 0:
            log_m, se_m = 0.0, 0.0
        else:
            g_shift = triple.gamma_at(beta(hj, float(l_steps)), purpose=tag + (2,))
            log_m, se_m, _ = ensemble_log_mass(
                g_shift, float(m_steps), beta(hj, float(l_steps)), triple.potential,
                purpose=tag + (3,), n_paths=n_paths, **kw
            )
        diff = log_ml - log_m - log_l
        se = math.sqrt(se_ml**2 + se_m**2 + se_l**2)
        rows.append(
            {
                "node": j,
                "log_residual": diff,
                "se_joint": se,
                "relative_residual": abs(math.expm1(diff)),
                "within_3se": abs(diff) <= 3.0 * se + 1e-12,
            }
        )
    return {"max_relative_residual": max(r["relative_residual"] for r in rows), "nodes": rows}


def eigen_residuals(
    triple: EigenTripleEstimate,
    t: float,
    *,
    node: int = 0,
    eval_points: Sequence[SpectralField] | None = None,
    phi: Callable[[np.ndarray, TorusSpec], np.ndarray] | None = None,
    stability_times: Sequence[float] = (),
    n_paths: int = 96,
    kb_paths: int | None = None,
) -> dict:
    """Eigen-property residuals of Theorem-level identities, re-estimated with fresh paths.

    (a) distance between the normalized t-unit push of Gamma(h) and Gamma(beta_t h);
    (b) relative eigenfunction residual at the evaluation points;
    (c) forward-stability decay of the normalized operator against the rank-one limit.
    """
    hj = float(triple.grid.nodes[node])
    obs = metrizing_family(PotentialDictionary.default(triple.params.torus))
    g = triple.gammas[node]
    kw = dict(params=triple.params, forcing=triple.forcing, noise=triple.noise, seed=triple.seed)

    log_mass, _, evolved = ensemble_log_mass(
        g, t, hj, triple.potential, purpose=(PURPOSE_EIGEN_DIAG, 2, node, 0), **kw
    )
    pushed = evolved.normalized()
    target = triple.gamma_at(beta(hj, t), purpose=(PURPOSE_EIGEN_DIAG, 2, node, 1))
    rng = derived_rng(triple.seed, (PURPOSE_EIGEN_DIAG, 2, node, 2))
    res_measure = bl_distance(pushed, target, obs)
    floor_measure = bl_noise_floor(pushed, target, obs, rng)

    if eval_points is None:
        idx = np.linspace(0, g.n - 1, 4).astype(int)
        eval_points = [SpectralField(triple.params.torus, _freeze(g.coeffs[i].copy())) for i in idx]
    res_fn = []
    lam_t = math.exp(triple.log_lambda(hj, t))
    for pi, w in enumerate(eval_points):
        integ = Integrator(triple.params, triple.forcing, triple.noise)
        incs = EnsembleIncrements(triple.seed, (PURPOSE_EIGEN_DIAG, 3, node, pi), 0, n_paths, triple.noise.d)
        W0 = np.broadcast_to(w.data, (n_paths, w.data.shape[0]))
        WT, logGc, _ = weighted_paths(W0, hj, t, triple.potential, integ, incs)
        logG = full_log_weights(triple.potential, logGc, triple.params.n_steps(t), triple.params.dt)
        f_term, _ = triple.eigf.evaluate_batch(
            WT, beta(hj, t), n_paths=kb_paths, purpose=(PURPOSE_EIGEN_DIAG, 3, node, pi, 1)
        )
        lhs = float(np.mean(np.exp(logG) * f_term)) / lam_t
        f_w, f_se = triple.eigf.evaluate(w, hj, n_paths=kb_paths, purpose=(PURPOSE_EIGEN_DIAG, 3, node, pi, 2))
        if f_w <= 0.0:
            raise EigenfunctionPositivityError("eigenfunction evaluation non-positive")
        res_fn.append(abs(lhs - f_w) / f_w)

    trend = []
    if phi is not None and stability_times:
        w0 = eval_points[0]
        f_w, _ = triple.eigf.evaluate(w0, hj, purpose=(PURPOSE_EIGEN_DIAG, 4, node, 0))
        for ti, tt in enumerate(stability_times):
            est, est_se = _plain_weighted_mean(
                triple, phi, w0, hj, float(tt), n_paths, (PURPOSE_EIGEN_DIAG, 4, node, 1, ti)
            )
            g_t = triple.gamma_at(beta(hj, tt), purpose=(PURPOSE_EIGEN_DIAG, 4, node, 2, ti))
            lim_mean, lim_se = g_t.mean_and_se(phi)
            lam_t = math.exp(triple.log_lambda(hj, tt))
            trend.append(
                {
                    "t": float(tt),
                    "residual": abs(est / lam_t - lim_mean * f_w),
                    "se": math.hypot(est_se / lam_t, lim_se * f_w),
                }
            )

    return {
        "eigenmeasure_residual": res_measure,
        "eigenmeasure_noise_floor": floor_measure,
        "eigenfunction_residual_max": max(res_fn),
        "forward_stability_trend": trend,
    }


def _plain_weighted_mean(triple, phi, w, h, t, n_paths, purpose) -> tuple[float, float]:
    integ = Integrator(triple.params, triple.forcing, triple.noise)
    incs = EnsembleIncrements(triple.seed, purpose, 0, n_paths, triple.noise.d)
    W0 = np.broadcast_to(w.data, (n_paths, w.data.shape[0]))
    WT, logGc, _ = weighted_paths(W0, _as_symbol_value(h), t, triple.potential, integ, incs)
    logG = full_log_weights(triple.potential, logGc, triple.params.n_steps(t), triple.params.dt)
    samples = np.exp(logG) * phi(WT, triple.params.torus)
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(n_paths))


# ---------------------------------------------------------------------------
# Doob transform
# ---------------------------------------------------------------------------

@dataclass
class DoobOperator:
    """Markov operator conjugating the weighted evolution with the eigen-triple."""

    triple: EigenTripleEstimate

    def apply(
        self,
        phi: Callable[[np.ndarray, TorusSpec], np.ndarray],
        t: float,
        h,
        w: SpectralField,
        n_paths: int,
        *,
        purpose: tuple = (PURPOSE_EIGEN_DIAG, 6),
        kb_paths: int | None = None,
    ) -> tuple[float, float]:
        tr = self.triple
        hv = _as_symbol_value(h)
        f_w, f_se = tr.eigf.evaluate(w, hv, n_paths=kb_paths, purpose=purpose + (0,))
        if f_w <= 0.0:
            raise EigenfunctionPositivityError("eigenfunction evaluation non-positive at the start point")
        integ = Integrator(tr.params, tr.forcing, tr.noise)
        incs = EnsembleIncrements(tr.seed, purpose + (1,), 0, n_paths, tr.noise.d)
        W0 = np.broadcast_to(w.data, (n_paths, w.data.shape[0]))
        WT, logGc, _ = weighted_paths(W0, hv, t, tr.potential, integ, incs)
        logG = full_log_weights(tr.potential, logGc, tr.params.n_steps(t), tr.params.dt)
        f_term, _ = tr.eigf.evaluate_batch(WT, beta(hv, t), n_paths=kb_paths, purpose=purpose + (2,))
        if np.any(f_term <= 0.0):
            raise EigenfunctionPositivityError("eigenfunction evaluation non-positive at a terminal point")
        lam_t = math.exp(tr.log_lambda(hv, t))
        samples = np.exp(logG) * phi(WT, tr.params.torus) * f_term / (lam_t * f_w)
        val = float(samples.mean())
        se_paths = float(samples.std(ddof=1) / math.sqrt(n_paths))
        se = math.hypot(se_paths, abs(val) * f_se / f_w)
        return val, se

    def invariance_residual(
        self,
        phi: Callable[[np.ndarray, TorusSpec], np.ndarray],
        h,
        t: float = 1.0,
        *,
        kb_paths: int | None = None,
        purpose: tuple = (PURPOSE_EIGEN_DIAG, 7),
    ) -> dict:
        """Residual of <gamma_V(h), T phi> = <gamma_V(beta_t h), phi> with gamma_V = F Gamma.

        The left side collapses to the evolved weighted ensemble paired with
        the terminal eigenfunction; both sides are independent estimates.
        """
        tr = self.triple
        hv = _as_symbol_value(h)
        j0, _, _ = tr.grid.bracketing(hv)
        g = tr.gammas[j0]
        _, _, evolved = ensemble_log_mass(
            g, t, hv, tr.potential,
            params=tr.params, forcing=tr.forcing, noise=tr.noise, seed=tr.seed,
            purpose=purpose + (0,),
        )
        # left side: the invariance identity turns <gamma_V(h), T phi> into the
        # F-weighted mean of phi over the evolved ensemble (self-normalized)
        f_term, _ = tr.eigf.evaluate_batch(
            evolved.coeffs, beta(hv, t), n_paths=kb_paths, purpose=purpose + (1,)
        )
        p = evolved.weights / evolved.total_mass
        lhs = float(np.sum(p * f_term * phi(evolved.coeffs, tr.params.torus))) / max(
            float(np.sum(p * f_term)), 1e-300
        )
        # right side: direct F-weighted mean over a fresh eigenmeasure estimate at beta_t h
        g_t = tr.gamma_at(beta(hv, t), purpose=purpose + (3,))
        f_t, _ = tr.eigf.evaluate_batch(g_t.coeffs, beta(hv, t), n_paths=kb_paths, purpose=purpose + (4,))
        q = g_t.weights / g_t.total_mass
        rhs = float(np.sum(q * f_t * phi(g_t.coeffs, tr.params.torus))) / max(float(np.sum(q * f_t)), 1e-300)
        return {"lhs": lhs, "rhs": rhs, "residual": abs(lhs - rhs)}


def doob_apply(op: DoobOperator, phi, t: float, h, w: SpectralField, n_paths: int, **kw) -> tuple[float, float]:
    """Conjugated-operator estimate; conservativity means phi = 1 returns 1 within error."""
    return op.apply(phi, t, h, w, n_paths, **kw)
