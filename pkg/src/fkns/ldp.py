"""Occupation statistics, the pressure function by two routes, and rate-function estimation.

The pressure of a potential is estimated directly, as the exponential growth
rate of path-averaged weights over a long horizon, and spectrally, as the
symbol-circle average of the eigenvalue table; agreement of the two routes is
the central cross-estimator test.  Direct-route runs store per-path integrals
of every dictionary term, so one simulated ensemble prices every potential in
the dictionary span under common random numbers.

Rate-function values are dictionary-relative Legendre transforms: the
supremum runs over the finite dictionary only, so reported values are lower
bounds for the full-space object.  The ascent uses the analytic subgradient
given by the equilibrium state (the eigenfunction-weighted eigenmeasure
family).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .spectral import SpectralField, TorusSpec, sobolev_norm_batch
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
from .feynman_kac import PotentialDictionary, PotentialSpec, WeightedEnsemble
from .eigen import (
    EigenTripleEstimate,
    PeriodicCurve,
    SymbolGrid,
    build_eigen_triple,
)
from . import parallel

PURPOSE_LDP = 5


# ---------------------------------------------------------------------------
# occupation measures
# ---------------------------------------------------------------------------

@dataclass
class OccupationRecord:
    """Time-averaged empirical measure of one long trajectory, projected onto observables."""

    t_final: float
    h0: float
    histogram: np.ndarray            # normalized mass over obs coords x symbol bins
    bin_edges: list[np.ndarray]
    axis_names: list[str]
    series_times: np.ndarray
    series: dict[str, np.ndarray]    # running time averages of tested functionals
    tightness_series: np.ndarray     # eta nu ||w||_1^2 along the run
    hitting_times: dict[float, float]


def occupation(
    w0: SpectralField,
    h0,
    T: float,
    observables: dict[str, Callable[[np.ndarray, TorusSpec], np.ndarray]],
    R_list: Sequence[float],
    *,
    params: SimulationParams,
    forcing: ForcingSpec,
    noise: NoiseSpec,
    seed: int,
    n_symbol_bins: int = 16,
    n_obs_bins: int = 12,
    obs_ranges: dict[str, tuple[float, float]] | None = None,
    tightness_eta: float = 0.05,
    save_every: int = 10,
    purpose: tuple = (PURPOSE_LDP, 0),
) -> OccupationRecord:
    """Single long trajectory: histogram, functional averages, hitting times.

    The histogram covers at most four observable coordinates plus the symbol
    circle; its mass is normalized to one exactly.  Hitting times record the
    first entry of the Sobolev-2 ball of each listed radius.
    """
    if len(observables) > 4:
        raise ValueError("histogram supports at most 4 observable coordinates")
    hv = _as_symbol_value(h0)
    names = list(observables)
    ranges = obs_ranges or {}
    edges = [
        np.linspace(*ranges.get(name, (-1.0, 1.0)), n_obs_bins + 1) for name in names
    ]
    edges.append(np.linspace(0.0, TWO_PI, n_symbol_bins + 1))
    integ = Integrator(params, forcing, noise)
    incs = EnsembleIncrements(seed, purpose, 0, 1, noise.d)
    n = params.n_steps(T)
    flat_shape = [n_obs_bins] * len(names) + [n_symbol_bins]
    counts = np.zeros(int(np.prod(flat_shape)))
    marks = list(range(0, n + 1, max(1, save_every)))
    if marks[-1] != n:
        marks.append(n)
    mark_set = set(marks)
    acc = {name: 0.0 for name in names}
    first_v = {name: 0.0 for name in names}
    series = {name: [] for name in names}
    series_times = []
    tight = np.empty(n + 1)
    hit: dict[float, float] = {float(R): math.nan for R in R_list}

    def on_state(r, t_rel, W):
        phase = beta(hv, t_rel)
        idx = 0
        for ax, name in enumerate(names):
            v = float(observables[name](W, params.torus)[0])
            if r == 0:
                first_v[name] = v
            acc[name] += params.dt * v
            b = min(max(np.searchsorted(edges[ax], v, side="right") - 1, 0), n_obs_bins - 1)
            idx = idx * n_obs_bins + b
        sb = min(int(phase / (TWO_PI / n_symbol_bins)), n_symbol_bins - 1)
        idx = idx * n_symbol_bins + sb
        counts[idx] += 1.0
        tight[r] = tightness_eta * params.viscosity * sobolev_norm_batch(W, params.torus, 1.0)[0] ** 2
        h2 = sobolev_norm_batch(W, params.torus, 2.0)[0]
        for R in hit:
            if math.isnan(hit[R]) and h2 <= R:
                hit[R] = t_rel
        if r in mark_set and r > 0:
            series_times.append(t_rel)
            for name in names:
                v_now = float(observables[name](W, params.torus)[0])
                series[name].append((acc[name] - 0.5 * params.dt * (first_v[name] + v_now)) / t_rel)

    advance_batch(w0.data[None], hv, T, integ, incs, on_state=on_state)
    hist = counts.reshape(flat_shape)
    hist = hist / hist.sum()
    return OccupationRecord(
        T, hv, hist, edges, names + ["symbol"],
        np.asarray(series_times), {k: np.asarray(v) for k, v in series.items()},
        tight, hit,
    )


def hitting_exponential_moment(tau_samples: Sequence[float], gamma: float) -> tuple[float, float]:
    """Empirical E exp(gamma tau) with standard error; nan samples (no hit) are dropped."""
    tau = np.asarray([t for t in tau_samples if not math.isnan(t)], dtype=float)
    if tau.size == 0:
        return math.nan, math.nan
    v = np.exp(gamma * tau)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0


# ---------------------------------------------------------------------------
# per-path dictionary term integrals (the shared direct-route table)
# ---------------------------------------------------------------------------

@dataclass
class PathTermTable:
    """Per-path trapezoid integrals of each dictionary term over [0, t] at symbol h."""

    terms: tuple
    t: float
    h: float
    integrals: np.ndarray  # (n_paths, n_terms)
    seed: int

    @property
    def n_paths(self) -> int:
        return self.integrals.shape[0]


def _term_chunk(args) -> np.ndarray:
    (starts, h, t, dictionary, params, forcing, noise, seed, purpose, stream0) = args
    integ = Integrator(params, forcing, noise)
    incs = EnsembleIncrements(seed, purpose, stream0, starts.shape[0], noise.d)
    spec = params.torus
    nT = len(dictionary.terms)
    acc = np.zeros((starts.shape[0], nT))
    first = np.zeros_like(acc)
    last = np.zeros_like(acc)

    def on_state(r, t_rel, W):
        nonlocal first, last
        phases = np.remainder(h + t_rel, TWO_PI)
        tv = np.stack([term.value(W, spec, phases) for term in dictionary.terms], axis=-1)
        if r == 0:
            first = tv
        acc[...] = acc + params.dt * tv
        last = tv

    advance_batch(starts, h, t, integ, incs, on_state=on_state)
    return acc - 0.5 * params.dt * (first + last)


def simulate_term_table(
    dictionary: PotentialDictionary,
    t: float,
    h,
    n_paths: int,
    initial,
    *,
    params: SimulationParams,
    forcing: ForcingSpec,
    noise: NoiseSpec,
    seed: int,
    purpose: tuple = (PURPOSE_LDP, 1),
    workers: int = 1,
    chunk_size: int = 256,
) -> PathTermTable:
    """Simulate one path ensemble and record every dictionary term integral along it.

    ``initial`` is a SpectralField (point mass) or WeightedEnsemble (paths
    start from a deterministic resample).  Work is dispatched in fixed-size
    chunks whose results are assembled by index, so reported values are
    bitwise independent of the worker count.
    """
    hv = _as_symbol_value(h)
    if isinstance(initial, WeightedEnsemble):
        rng = derived_rng(seed, purpose + (0,))
        starts = initial.resampled(n_paths, rng).coeffs
    else:
        starts = np.tile(initial.data, (n_paths, 1))
    tasks = []
    for lo in range(0, n_paths, chunk_size):
        hi = min(lo + chunk_size, n_paths)
        tasks.append(
            (starts[lo:hi], hv, float(t), dictionary, params, forcing, noise, seed, purpose + (1,), lo)
        )
    results = parallel.chunked_map(_term_chunk, tasks, workers)
    return PathTermTable(dictionary.terms, float(t), hv, np.vstack(results), seed)


# ---------------------------------------------------------------------------
# pressure function
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PressureEstimate:
    value: float
    std_error: float
    n_paths: int
    ess: float
    degenerate: bool


@dataclass
class PressureCurve:
    """Both pressure routes for one dictionary potential."""

    theta: tuple[float, ...]
    offset: float
    t: float
    q_direct: float
    se_direct: float
    q_spectral: float
    se_spectral: float


def pressure_from_table(potential: PotentialSpec, table: PathTermTable) -> PressureEstimate:
    """Direct-route pressure evaluated on a stored term table (common random numbers)."""
    if potential.terms != table.terms:
        raise ValueError("potential terms do not match the table dictionary")
    x = table.integrals @ np.asarray(potential.weights) + potential.offset * table.t
    return _pressure_lse(x, table.t)


def _pressure_lse(x: np.ndarray, t: float) -> PressureEstimate:
    n = x.size
    m = x.max()
    e = np.exp(x - m)
    s = e.sum()
    q = (m + math.log(s / n)) / t
    # delete-one jackknife on the log-mean
    loo = (m + np.log((s - e) / (n - 1))) / t
    se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    ess = float(s**2 / np.sum(e**2))
    return PressureEstimate(q, se, n, ess, ess < 2.0)


def pressure_direct(
    potential: PotentialSpec,
    t: float,
    h,
    n_paths: int,
    initial,
    *,
    params: SimulationParams,
    forcing: ForcingSpec,
    noise: NoiseSpec,
    seed: int,
    table: PathTermTable | None = None,
    workers: int = 1,
) -> PressureEstimate:
    """(1/t) log ensemble mean of exp(t <V, zeta_t>), max-shifted, with jackknife error."""
    if table is None:
        table = simulate_term_table(
            PotentialDictionary(potential.terms), t, h, n_paths, initial,
            params=params, forcing=forcing, noise=noise, seed=seed, workers=workers,
        )
    return pressure_from_table(potential, table)


def pressure_spectral(potential: PotentialSpec, triple: EigenTripleEstimate) -> tuple[float, float]:
    """Symbol-circle average of the eigenvalue table with propagated Monte Carlo error."""
    n = triple.grid.n_h
    return float(triple.lam.mean()), float(np.sqrt(np.sum(triple.lam_se**2)) / n)


def pressure_properties(
    pairs: Sequence[tuple[PotentialSpec, PotentialSpec]],
    q_fn: Callable[[PotentialSpec], tuple[float, float]],
) -> list[dict]:
    """Lipschitz and midpoint-convexity checks over a probe set of potential pairs.

    ``q_fn`` must evaluate both members under common random numbers (a shared
    term table does this).  The Lipschitz right side uses the computable
    sup-norm bound of the difference, exact for pure constant shifts.
    """
    rows = []
    for v1, v2 in pairs:
        q1, s1 = q_fn(v1)
        q2, s2 = q_fn(v2)
        bound = v1.difference_bound(v2)
        if v1.terms == v2.terms:
            mid = PotentialSpec(
                v1.terms,
                tuple(0.5 * (a + b) for a, b in zip(v1.weights, v2.weights)),
                0.5 * (v1.offset + v2.offset),
            )
            qm, sm = q_fn(mid)
        else:
            qm, sm = math.nan, math.nan
        se_lip = math.hypot(s1, s2)
        se_conv = math.sqrt(sm**2 + 0.25 * s1**2 + 0.25 * s2**2) if not math.isnan(sm) else math.nan
        rows.append(
            {
                "lipschitz_lhs": abs(q1 - q2),
                "lipschitz_bound": bound,
                "lipschitz_ok": abs(q1 - q2) <= bound + 3.0 * se_lip + 1e-12,
                "midpoint_lhs": qm,
                "midpoint_rhs": 0.5 * (q1 + q2),
                "midpoint_ok": (math.isnan(qm) or qm <= 0.5 * (q1 + q2) + 3.0 * se_conv + 1e-12),
                "se_lip": se_lip,
                "se_conv": se_conv,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# targets for the rate function
# ---------------------------------------------------------------------------

class EnsembleFamilyTarget:
    """Target measure given by per-node ensembles (optionally eigenfunction-weighted)."""

    def __init__(self, grid: SymbolGrid, ensembles: Sequence[WeightedEnsemble],
                 f_weights: Sequence[np.ndarray] | None = None):
        self.grid = grid
        self.ensembles = list(ensembles)
        self.f_weights = list(f_weights) if f_weights is not None else None

    def term_means(self, dictionary: PotentialDictionary) -> np.ndarray:
        sums = np.zeros(dictionary.n_terms)
        norm = 0.0
        for j, hj in enumerate(self.grid.nodes):
            g = self.ensembles[j]
            p = g.weights / g.total_mass
            if self.f_weights is not None:
                p = p * self.f_weights[j]
            tv = np.stack([t.value(g.coeffs, g.spec, hj) for t in dictionary.terms], axis=-1)
            sums += p @ tv
            norm += p.sum()
        return sums / norm


class HistogramTarget:
    """Target given as a histogram over the dictionary's squashed observables x symbol bins.

    Bin centers stand in for the squashed observable values; the j-th term
    mean is the mass-weighted average of profile_j(symbol) * coordinate_j.
    """

    def __init__(self, histogram: np.ndarray, bin_edges: Sequence[np.ndarray]):
        self.hist = np.asarray(histogram, dtype=float)
        self.hist = self.hist / self.hist.sum()
        self.edges = [np.asarray(e) for e in bin_edges]

    def term_means(self, dictionary: PotentialDictionary) -> np.ndarray:
        if self.hist.ndim != len(self.edges) or self.hist.ndim != dictionary.n_terms + 1:
            raise ValueError("histogram axes must be the dictionary observables plus the symbol")
        centers = [0.5 * (e[1:] + e[:-1]) for e in self.edges]
        grids = np.meshgrid(*centers, indexing="ij")
        out = np.empty(dictionary.n_terms)
        hsym = grids[-1]
        for j, term in enumerate(dictionary.terms):
            out[j] = float(np.sum(self.hist * term.profile.eval(hsym) * grids[j]))
        return out


# ---------------------------------------------------------------------------
# Legendre ascent
# ---------------------------------------------------------------------------

@dataclass
class RateFunctionEstimate:
    value: float
    theta_star: np.ndarray
    v_star: PotentialSpec
    gap: float
    iterations: int
    diverged: bool
    cap: float
    probes: list[tuple[np.ndarray, float]]
    equilibrium: EigenTripleEstimate | None


class SpectralPressureOracle:
    """Cached spectral-route pressure Q(theta) with its equilibrium-state subgradient.

    Triples are built with fixed seeds, so Q is a deterministic function of
    theta and the ascent sees a smooth landscape; successive evaluations warm
    start from the nearest cached coefficient point.
    """

    def __init__(
        self,
        dictionary: PotentialDictionary,
        grid: SymbolGrid,
        *,
        params: SimulationParams,
        forcing: ForcingSpec,
        noise: NoiseSpec,
        seed: int,
        n_particles: int = 48,
        n_iters: int = 24,
        warm_iters: int = 10,
        kb_paths: int = 8,
    ):
        self.dictionary = dictionary
        self.grid = grid
        self.params, self.forcing, self.noise, self.seed = params, forcing, noise, seed
        self.n_particles, self.n_iters, self.warm_iters = n_particles, n_iters, warm_iters
        self.kb_paths = kb_paths
        self._cache: dict[tuple, EigenTripleEstimate] = {}

    def _key(self, theta) -> tuple:
        return tuple(round(float(x), 10) for x in theta)

    def triple_for(self, theta) -> EigenTripleEstimate:
        key = self._key(theta)
        if key not in self._cache:
            init = None
            iters = self.n_iters
            if self._cache:
                nearest = min(self._cache, key=lambda k: sum((a - b) ** 2 for a, b in zip(k, key)))
                init = self._cache[nearest].gammas
                iters = self.warm_iters
            self._cache[key] = build_eigen_triple(
                self.dictionary.make(theta), self.grid,
                params=self.params, forcing=self.forcing, noise=self.noise, seed=self.seed,
                n_particles=self.n_particles, n_iters=iters, kb_paths=self.kb_paths,
                init=init, min_iters=min(6, iters),
            )
        return self._cache[key]

    def __call__(self, theta) -> tuple[float, float, np.ndarray]:
        tr = self.triple_for(theta)
        q, se = pressure_spectral(tr.potential, tr)
        grad = tr.equilibrium_term_means(self.dictionary, kb_paths=self.kb_paths)
        return q, se, grad


def legendre(
    mu_target,
    dictionary: PotentialDictionary,
    pressure_oracle: SpectralPressureOracle,
    *,
    max_iters: int = 20,
    gradient_tol: float = 1e-3,
    cap: float = 5.0,
    step0: float = 2.0,
    theta0: Sequence[float] | None = None,
) -> RateFunctionEstimate:
    """Maximize <V_theta, mu> - Q(V_theta) over dictionary coefficients by backtracking ascent.

    The subgradient of Q is the equilibrium-state term mean, so the ascent
    direction is the mismatch between target and equilibrium observables.
    Divergence past ``cap`` is reported as a lower bound (unreachable target).
    """
    b = mu_target.term_means(dictionary)
    theta = np.zeros(dictionary.n_terms) if theta0 is None else np.asarray(theta0, dtype=float)
    probes: list[tuple[np.ndarray, float]] = []

    def objective(th) -> tuple[float, float, np.ndarray]:
        q, se, grad = pressure_oracle(th)
        j = float(th @ b - q)
        probes.append((th.copy(), j))
        return j, se, grad

    j_cur, se_cur, grad_q = objective(theta)
    g = b - grad_q
    step = step0
    it = 0
    diverged = False
    while it < max_iters:
        it += 1
        if j_cur > cap:
            diverged = True
            break
        if np.max(np.abs(g)) < gradient_tol:
            break
        accepted = False
        while step > 1e-4:
            cand = theta + step * g
            j_new, se_new, grad_new = objective(cand)
            if j_new >= j_cur - 0.5 * math.hypot(se_cur, se_new):
                theta, j_cur, se_cur, grad_q = cand, j_new, se_new, grad_new
                g = b - grad_q
                accepted = True
                step = min(step * 1.5, 8.0)
                break
            step *= 0.5
        if not accepted:
            break
    best = max(probes, key=lambda p: p[1])
    theta_star, value = best[0], max(best[1], 0.0)
    equilibrium = pressure_oracle.triple_for(theta_star) if not diverged else None
    return RateFunctionEstimate(
        value=value if not diverged else cap,
        theta_star=theta_star,
        v_star=dictionary.make(theta_star),
        gap=float(np.max(np.abs(g))),
        iterations=it,
        diverged=diverged,
        cap=cap,
        probes=probes,
        equilibrium=equilibrium,
    )


# ---------------------------------------------------------------------------
# ensemble time-average machinery (LLN / CLT / deviation probabilities)
# ---------------------------------------------------------------------------

def ensemble_time_averages(
    observables: dict[str, Callable[[np.ndarray, TorusSpec, np.ndarray], np.ndarray]],
    T_marks: Sequence[float],
    n_paths: int,
    h0,
    initial,
    *,
    params: SimulationParams,
    forcing: ForcingSpec,
    noise: NoiseSpec,
    seed: int,
    purpose: tuple = (PURPOSE_LDP, 2),
    workers: int = 1,
    chunk_size: int = 256,
) -> dict[str, np.ndarray]:
    """Per-path time averages <phi, zeta_T> at each mark T, from a single path ensemble.

    Observable callables receive (states, spec, symbol phases).  Marks must be
    step-grid times; averages at the marks reuse trajectory prefixes.
    """
    hv = _as_symbol_value(h0)
    marks = sorted(float(T) for T in T_marks)
    if isinstance(initial, WeightedEnsemble):
        rng = derived_rng(seed, purpose + (0,))
        starts = initial.resampled(n_paths, rng).coeffs
    else:
        starts = np.tile(initial.data, (n_paths, 1))
    tasks = []
    for lo in range(0, n_paths, chunk_size):
        hi = min(lo + chunk_size, n_paths)
        tasks.append((starts[lo:hi], hv, marks, observables, params, forcing, noise, seed, purpose + (1,), lo))
    results = parallel.chunked_map(_averages_chunk, tasks, workers)
    return {
        name: np.vstack([r[name] for r in results]).T  # (n_marks, n_paths)
        for name in observables
    }


def _averages_chunk(args):
    (starts, hv, marks, observables, params, forcing, noise, seed, purpose, stream0) = args
    integ = Integrator(params, forcing, noise)
    incs = EnsembleIncrements(seed, purpose, stream0, starts.shape[0], noise.d)
    spec = params.torus
    mark_steps = [params.n_steps(T) for T in marks]
    mark_map = {s: i for i, s in enumerate(mark_steps)}
    B = starts.shape[0]
    acc = {k: np.zeros(B) for k in observables}
    first = {k: np.zeros(B) for k in observables}
    out = {k: np.full((B, len(marks)), np.nan) for k in observables}

    def on_state(r, t_rel, W):
        phases = np.remainder(hv + t_rel, TWO_PI)
        for name, fn in observables.items():
            v = fn(W, spec, phases)
            if r == 0:
                first[name][:] = v
            acc[name] += params.dt * v
            if r in mark_map and r > 0:
                out[name][:, mark_map[r]] = (acc[name] - 0.5 * params.dt * (first[name] + v)) / t_rel

    advance_batch(starts, hv, max(marks), integ, incs, on_state=on_state)
    return out


def centered_observable(
    phi: Callable[[np.ndarray, TorusSpec], np.ndarray], gamma_mean_curve: PeriodicCurve
) -> Callable[[np.ndarray, TorusSpec, np.ndarray], np.ndarray]:
    """phi_Gamma(w, h) = phi(w) - <Gamma(h), phi>, with the mean read from a periodic table."""

    def f(W, spec, phases):
        return phi(W, spec) - gamma_mean_curve.value(phases)

    return f


def gamma_mean_curve(triple: EigenTripleEstimate, phi) -> PeriodicCurve:
    """Table of <Gamma(h_j), phi> for centering observables against the periodic invariant family."""
    vals = np.array([g.mean(phi) for g in triple.gammas])
    return PeriodicCurve(triple.grid.n_h, vals)


def lln_decay(
    phi_gamma,
    T_list: Sequence[float],
    n_paths: int,
    h0,
    initial,
    **kw,
) -> list[dict]:
    """RMS of <phi_Gamma, zeta_T> over paths, with the sqrt(T)-compensated value."""
    av = ensemble_time_averages({"phi": phi_gamma}, T_list, n_paths, h0, initial, **kw)["phi"]
    rows = []
    for i, T in enumerate(sorted(float(x) for x in T_list)):
        rms = float(np.sqrt(np.mean(av[i] ** 2)))
        rows.append({"T": T, "rms": rms, "rms_sqrt_T": rms * math.sqrt(T)})
    return rows


def clt_diagnostic(
    phi_gamma,
    T: float,
    n_paths: int,
    h0,
    initial,
    **kw,
) -> dict:
    """Normality of sqrt(T) <phi_Gamma, zeta_T>: quantile correlation and variance stabilization."""
    from scipy import stats

    marks = [T / 4.0, T / 2.0, T]
    av = ensemble_time_averages({"phi": phi_gamma}, marks, n_paths, h0, initial, **kw)["phi"]
    scaled = [av[i] * math.sqrt(marks[i]) for i in range(3)]
    x = scaled[-1]
    sd = x.std(ddof=1)
    if sd == 0.0:
        return {"degenerate": True, "quantile_correlation": math.nan,
                "variances": [0.0, 0.0, 0.0], "mean": float(x.mean()), "se": 0.0}
    z = np.sort((x - x.mean()) / sd)
    qs = stats.norm.ppf((np.arange(1, n_paths + 1) - 0.5) / n_paths)
    corr = float(np.corrcoef(z, qs)[0, 1])
    return {
        "degenerate": False,
        "quantile_correlation": corr,
        "variances": [float(s.var(ddof=1)) for s in scaled],
        "mean": float(x.mean()),
        "se": float(sd / math.sqrt(n_paths)),
    }


def deviation_probability(
    phi_gamma,
    interval: tuple[float, float],
    T_list: Sequence[float],
    n_paths: int,
    h0,
    initial,
    *,
    rate_bounds: tuple[float, float] | None = None,
    hit_floor: int = 10,
    **kw,
) -> dict:
    """Empirical decay rate of P{<phi_Gamma, zeta_T> in E} across a horizon grid.

    Rows report hits and the per-horizon log-rate; a least-squares slope of
    -log p against T is fitted over horizons with at least ``hit_floor`` hits.
    Horizons with no hits are reported via the one-sided resolution bound.
    """
    if len(T_list) < 3:
        raise ValueError("at least 3 horizons required")
    lo, hi = interval
    av = ensemble_time_averages({"phi": phi_gamma}, T_list, n_paths, h0, initial, **kw)["phi"]
    rows = []
    Ts = sorted(float(x) for x in T_list)
    for i, T in enumerate(Ts):
        hits = int(np.sum((av[i] > lo) & (av[i] < hi)))
        p = hits / n_paths
        rows.append(
            {
                "T": T,
                "hits": hits,
                "n": n_paths,
                "p": p,
                "log_rate": (-math.log(p) / T) if hits > 0 else math.nan,
                "one_sided_bound": (-math.log(max(1.0, hit_floor) / n_paths) / T) if hits == 0 else math.nan,
            }
        )
    fit_rows = [r for r in rows if r["hits"] >= hit_floor]
    slope = math.nan
    if len(fit_rows) >= 2:
        Tv = np.array([r["T"] for r in fit_rows])
        y = np.array([-math.log(r["p"]) for r in fit_rows])
        slope = float(np.polyfit(Tv, y, 1)[0])
    return {"rows": rows, "fitted_rate": slope, "legendre_bounds": rate_bounds}


def scalar_rate_bounds(
    make_potential: Callable[[float], PotentialSpec],
    interval: tuple[float, float],
    s_grid: Sequence[float],
    q_of_potential: Callable[[PotentialSpec], float],
    v_grid: Sequence[float] | None = None,
) -> tuple[float, float]:
    """Rate-function bounds for a scalar deviation set by the 1-D contraction.

    J(v) = sup_s (s v - q(s)) with q(s) the pressure of s times the centered
    observable; returns (inf over the open interval, inf over its closure) on
    a value grid.
    """
    s = np.asarray(sorted(s_grid), dtype=float)
    q = np.array([q_of_potential(make_potential(float(x))) for x in s])
    lo, hi = interval
    if v_grid is None:
        span = 1.0 if not math.isfinite(hi - lo) else hi - lo
        vhi = hi if math.isfinite(hi) else lo + 2.0 * span
        v_grid = np.linspace(lo, vhi, 33)
    vs = np.asarray(v_grid, dtype=float)
    J = np.max(vs[:, None] * s[None, :] - q[None, :], axis=1)
    inside_open = (vs > lo) & (vs < hi)
    inside_closed = (vs >= lo) & (vs <= hi)
    l_minus = float(J[inside_open].min()) if inside_open.any() else math.inf
    l_plus = float(J[inside_closed].min()) if inside_closed.any() else math.inf
    return l_minus, l_plus
