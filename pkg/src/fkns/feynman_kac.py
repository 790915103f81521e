"""Monte Carlo realization of the weighted evolution operators and their dual action.

The operator applied to an observable phi is estimated by the path-ensemble
mean of exp(int_s^t V(Phi_r, beta_r h) dr) phi(Phi_t), the time integral
taken by the trapezoid rule on the step grid.  Potentials are built from a
finite dictionary of squashed low-mode observables, so boundedness and a
bounded gradient hold by construction rather than by assertion.

All comparison identities (shift covariance, monotonicity, translation,
cocycle) are exercised with common random numbers: shared increments turn
distributional identities into per-path ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .spectral import SpectralField, TorusSpec, _freeze, sobolev_norm_batch, tables_for
from .sde import (
    TWO_PI,
    EnsembleIncrements,
    ForcingSpec,
    Integrator,
    NoiseSpec,
    SimulationParams,
    advance_batch,
    beta,
    _as_symbol_value,
)

PURPOSE_FK = 1


class NonFiniteWeightError(RuntimeError):
    """A path weight left the representable range; the potential is not bounded as constructed."""


class EnsembleCollapseError(RuntimeError):
    """Effective sample size fell below 2: potential too aggressive for the particle count."""


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HProfile:
    """Finite trigonometric polynomial a0 + sum_m (am cos(m h) + bm sin(m h))."""

    const: float = 1.0
    harmonics: tuple[tuple[int, float, float], ...] = ()

    def eval(self, h):
        out = np.full_like(np.asarray(h, dtype=float), self.const)
        for m, am, bm in self.harmonics:
            out = out + am * np.cos(m * np.asarray(h)) + bm * np.sin(m * np.asarray(h))
        return out

    def sup_bound(self) -> float:
        return abs(self.const) + sum(math.hypot(am, bm) for _, am, bm in self.harmonics)

    def lipschitz(self) -> float:
        return sum(m * math.hypot(am, bm) for m, am, bm in self.harmonics)


def _energy_gradient_bound(c: float) -> float:
    # max over r >= 0 of 2 r sech^2(r^2 / c), the gradient norm of the squashed energy
    r = np.linspace(0.0, 4.0 * math.sqrt(c) + 1.0, 4001)
    return float(np.max(2.0 * r / np.cosh(r**2 / c) ** 2))


@dataclass(frozen=True)
class PotentialTerm:
    """One dictionary entry: h-profile times a squashed observable of the field.

    kinds: ``mode_re``/``mode_im`` read Re/Im of a retained coefficient,
    ``energy`` reads ||w||^2, ``const`` is the pure h-profile (no squash).
    The squash map is c tanh(x / c), bounded by c with slope at most one.
    """

    kind: str
    wavevector: tuple[int, int] | None = None
    squash_scale: float | None = 1.0
    profile: HProfile = HProfile()

    def __post_init__(self):
        if self.kind not in ("mode_re", "mode_im", "energy", "const"):
            raise ValueError(f"unknown observable kind {self.kind!r}")
        if self.kind in ("mode_re", "mode_im") and self.wavevector is None:
            raise ValueError("mode observables need a wavevector")
        if self.kind != "const" and (self.squash_scale is None or self.squash_scale <= 0):
            raise ValueError("squash scale must be positive")

    def observe(self, W: np.ndarray, spec: TorusSpec) -> np.ndarray:
        """Raw (unsquashed) observable per path."""
        if self.kind == "const":
            return np.ones(W.shape[0])
        if self.kind == "energy":
            return 2.0 * np.sum(np.abs(W) ** 2, axis=-1)
        t = tables_for(spec)
        k = self.wavevector
        if k in t.index:
            z = W[:, t.index[k]]
        else:
            z = np.conj(W[:, t.index[(-k[0], -k[1])]])
        return np.real(z) if self.kind == "mode_re" else np.imag(z)

    def squashed(self, W: np.ndarray, spec: TorusSpec) -> np.ndarray:
        x = self.observe(W, spec)
        if self.kind == "const":
            return x
        c = self.squash_scale
        return c * np.tanh(x / c)

    def value(self, W: np.ndarray, spec: TorusSpec, h) -> np.ndarray:
        return self.profile.eval(h) * self.squashed(W, spec)

    def w_bound(self) -> float:
        amp = 1.0 if self.kind == "const" else self.squash_scale
        return amp * self.profile.sup_bound()

    def gradient_bound(self) -> float:
        if self.kind == "const":
            return 0.0
        if self.kind == "energy":
            return _energy_gradient_bound(self.squash_scale) * self.profile.sup_bound()
        # Riesz gradient of Re/Im w_hat(k) is a unit-amplitude mode pair of H-norm 1/sqrt(2)
        return self.profile.sup_bound() / math.sqrt(2.0)

    def h_lipschitz(self) -> float:
        amp = 1.0 if self.kind == "const" else self.squash_scale
        return amp * self.profile.lipschitz()


@dataclass(frozen=True)
class PotentialSpec:
    """Bounded potential V(w, h) = offset + sum_j theta_j profile_j(h) squash_j(obs_j(w))."""

    terms: tuple[PotentialTerm, ...] = ()
    weights: tuple[float, ...] = ()
    offset: float = 0.0

    def __post_init__(self):
        if len(self.terms) != len(self.weights):
            raise ValueError("one weight per term required")

    @staticmethod
    def constant(c: float) -> "PotentialSpec":
        return PotentialSpec(offset=float(c))

    @property
    def is_constant(self) -> bool:
        return not self.terms or all(w == 0.0 for w in self.weights)

    def term_values(self, W: np.ndarray, spec: TorusSpec, h) -> np.ndarray:
        """(B, n_terms) matrix of unweighted term values (the shared-table building block)."""
        if not self.terms:
            return np.zeros((W.shape[0], 0))
        return np.stack([t.value(W, spec, h) for t in self.terms], axis=-1)

    def value_batch_centered(self, W: np.ndarray, spec: TorusSpec, h) -> np.ndarray:
        """V minus its constant offset; the offset is reinstated analytically by the engine.

        Splitting the offset makes constant shifts of the potential act on path
        weights as exact per-path multiplications, so shift identities hold at
        float precision and resampling decisions cannot depend on the shift.
        """
        out = np.zeros(W.shape[0])
        for theta, term in zip(self.weights, self.terms):
            if theta != 0.0:
                out = out + theta * term.value(W, spec, h)
        return out

    def value_batch(self, W: np.ndarray, spec: TorusSpec, h) -> np.ndarray:
        return self.offset + self.value_batch_centered(W, spec, h)

    def value(self, w: SpectralField, h) -> float:
        return float(self.value_batch(w.data[None], w.spec, _as_symbol_value(h))[0])

    def bound(self) -> float:
        """Computable sup bound: |V| <= sum |theta_j| c_j sup|p_j| + |offset|."""
        return abs(self.offset) + sum(abs(t) * term.w_bound() for t, term in zip(self.weights, self.terms))

    def gradient_bound(self) -> float:
        return sum(abs(t) * term.gradient_bound() for t, term in zip(self.weights, self.terms))

    def h_lipschitz(self) -> float:
        return sum(abs(t) * term.h_lipschitz() for t, term in zip(self.weights, self.terms))

    def shifted(self, c: float) -> "PotentialSpec":
        return PotentialSpec(self.terms, self.weights, self.offset + float(c))

    def difference_bound(self, other: "PotentialSpec") -> float:
        """Upper bound for ||V1 - V2||_inf when both share a dictionary (or for any pair, by triangle)."""
        if self.terms == other.terms:
            d = PotentialSpec(
                self.terms,
                tuple(a - b for a, b in zip(self.weights, other.weights)),
                self.offset - other.offset,
            )
            return d.bound()
        return self.bound() + other.bound()


@dataclass(frozen=True)
class PotentialDictionary:
    """Fixed basis of potential terms; coefficients theta select a member V_theta."""

    terms: tuple[PotentialTerm, ...]

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    def make(self, theta: Sequence[float], offset: float = 0.0) -> PotentialSpec:
        theta = tuple(float(x) for x in theta)
        if len(theta) != self.n_terms:
            raise ValueError(f"need {self.n_terms} coefficients")
        return PotentialSpec(self.terms, theta, float(offset))

    @staticmethod
    def default(spec: TorusSpec) -> "PotentialDictionary":
        """Low-mode squashed observables with a few h-profiles; matches the default noise band."""
        return PotentialDictionary(
            (
                PotentialTerm("mode_re", (1, 0), 0.5, HProfile(1.0)),
                PotentialTerm("mode_re", (0, 1), 0.5, HProfile(0.0, ((1, 1.0, 0.0),))),
                PotentialTerm("mode_im", (1, 1), 0.5, HProfile(0.0, ((1, 0.0, 1.0),))),
                PotentialTerm("energy", None, 1.0, HProfile(1.0)),
            )
        )


# ---------------------------------------------------------------------------
# weighted ensembles
# ---------------------------------------------------------------------------

@dataclass
class WeightedEnsemble:
    """Particles (field, positive weight) standing in for a finite non-negative measure."""

    spec: TorusSpec
    coeffs: np.ndarray   # (n, M) complex
    weights: np.ndarray  # (n,) positive
    total_mass: float = field(init=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.coeffs.ndim != 2 or self.weights.shape != (self.coeffs.shape[0],):
            raise ValueError("coeffs must be (n, M) with one weight per particle")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights <= 0.0):
            raise NonFiniteWeightError("ensemble weights must be finite and positive")
        self.total_mass = float(self.weights.sum())

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    @staticmethod
    def from_point(w: SpectralField, n: int, mass: float = 1.0) -> "WeightedEnsemble":
        return WeightedEnsemble(w.spec, np.tile(w.data, (n, 1)), np.full(n, mass / n))

    @staticmethod
    def from_fields(fields: Sequence[SpectralField], weights: Sequence[float] | None = None) -> "WeightedEnsemble":
        spec = fields[0].spec
        co = np.stack([f.data for f in fields])
        ws = np.full(len(fields), 1.0 / len(fields)) if weights is None else np.asarray(weights, float)
        return WeightedEnsemble(spec, co, ws)

    def particles(self):
        for i in range(self.n):
            yield SpectralField(self.spec, _freeze(self.coeffs[i].copy())), float(self.weights[i])

    def normalized(self) -> "WeightedEnsemble":
        return WeightedEnsemble(self.spec, self.coeffs, self.weights / self.total_mass)

    def ess(self) -> float:
        p = self.weights / self.total_mass
        return float(1.0 / np.sum(p * p))

    def mean(self, fn: Callable[[np.ndarray, TorusSpec], np.ndarray]) -> float:
        p = self.weights / self.total_mass
        return float(np.sum(p * fn(self.coeffs, self.spec)))

    def mean_and_se(self, fn) -> tuple[float, float]:
        p = self.weights / self.total_mass
        v = fn(self.coeffs, self.spec)
        m = float(np.sum(p * v))
        var = float(np.sum(p * (v - m) ** 2))
        (n_eff,) = (self.ess(),)
        return m, math.sqrt(max(var, 0.0) / max(n_eff, 1.0))

    def resampled(self, n: int, rng: np.random.Generator) -> "WeightedEnsemble":
        """Systematic resampling to n particles; preserves total mass."""
        p = self.weights / self.total_mass
        positions = (rng.random() + np.arange(n)) / n
        idx = np.searchsorted(np.cumsum(p), positions)
        idx = np.minimum(idx, self.n - 1)
        return WeightedEnsemble(self.spec, self.coeffs[idx], np.full(n, self.total_mass / n))

    def scaled(self, c: float) -> "WeightedEnsemble":
        return WeightedEnsemble(self.spec, self.coeffs, self.weights * float(c))


def concat_ensembles(a: WeightedEnsemble, b: WeightedEnsemble) -> WeightedEnsemble:
    return WeightedEnsemble(a.spec, np.vstack([a.coeffs, b.coeffs]), np.concatenate([a.weights, b.weights]))


# ---------------------------------------------------------------------------
# path-weight engine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FKEstimate:
    value: float
    std_error: float
    n_paths: int


def one(W: np.ndarray, spec: TorusSpec) -> np.ndarray:
    """The constant observable 1_H."""
    return np.ones(W.shape[0])


def squared_norm(W: np.ndarray, spec: TorusSpec) -> np.ndarray:
    return sobolev_norm_batch(W, spec) ** 2


def weighted_paths(
    W0: np.ndarray,
    h0,
    duration: float,
    potential: PotentialSpec,
    integ: Integrator,
    increments: EnsembleIncrements | None,
    t_origin: float = 0.0,
    record_steps: Sequence[int] = (),
    extra_on_state: Callable[[int, float, np.ndarray, np.ndarray], None] | None = None,
) -> tuple[np.ndarray, np.ndarray, dict[int, np.ndarray]]:
    """Advance paths while accumulating the trapezoid integral of V - offset along them.

    Returns (terminal states, centered log weights, {step: centered prefixes}).
    The full log weight over r steps is the centered value plus
    ``potential.offset * (r * dt)``; the split keeps constant shifts of the
    potential exact per path.  ``extra_on_state`` additionally sees
    (step, t_rel, states, centered V values) for custom recording.
    """
    params = integ.params
    dt = params.dt
    n = params.n_steps(duration)
    spec = params.torus
    h0a = np.asarray(h0, dtype=float)
    acc = np.zeros(W0.shape[0])
    v_first = np.zeros(W0.shape[0])
    v_last = np.zeros(W0.shape[0])
    prefixes: dict[int, np.ndarray] = {}
    marks = set(int(r) for r in record_steps)

    def on_state(r: int, t_rel: float, W: np.ndarray) -> None:
        nonlocal acc, v_first, v_last
        phases = np.remainder(h0a + (t_origin + t_rel), TWO_PI)
        v = potential.value_batch_centered(W, spec, phases)
        if r == 0:
            v_first = v
        acc = acc + dt * v
        v_last = v
        if r in marks:
            prefixes[r] = acc - 0.5 * dt * (v_first + v)
        if extra_on_state is not None:
            extra_on_state(r, t_rel, W, v)

    WT = advance_batch(W0, h0a, duration, integ, increments, on_state=on_state, t_origin=t_origin)
    logG = acc - 0.5 * dt * (v_first + v_last) if n > 0 else np.zeros(W0.shape[0])
    if 0 in marks:
        prefixes[0] = np.zeros(W0.shape[0])
    if not np.all(np.isfinite(logG)):
        raise NonFiniteWeightError("non-finite Feynman-Kac exponent along a path")
    return WT, logG, prefixes


def full_log_weights(potential: PotentialSpec, logG_centered: np.ndarray, n_steps: int, dt: float) -> np.ndarray:
    """Reinstate the offset contribution: centered + offset * (n dt)."""
    return logG_centered + potential.offset * (n_steps * dt)


def fk_apply(
    phi: Callable[[np.ndarray, TorusSpec], np.ndarray],
    s: float,
    t: float,
    h,
    w: SpectralField,
    n_paths: int,
    *,
    potential: PotentialSpec,
    params: SimulationParams,
    forcing: ForcingSpec,
    noise: NoiseSpec | None,
    seed: int,
    purpose: tuple = (PURPOSE_FK,),
    stream0: int = 0,
    return_samples: bool = False,
):
    """Monte Carlo estimate of the weighted expectation of phi over [s, t] at symbol h.

    The phase protocol matches ``solve``: starting the clock at s with symbol
    h is per-path identical to starting at 0 with symbol beta_s h under shared
    increments.
    """
    if t < s:
        raise ValueError("t must be >= s")
    integ = Integrator(params, forcing, noise)
    incs = (
        EnsembleIncrements(seed, purpose, stream0, n_paths, noise.d) if noise is not None else None
    )
    W0 = np.broadcast_to(w.data, (n_paths, w.data.shape[0]))
    phi0 = beta(_as_symbol_value(h), s)
    WT, logGc, _ = weighted_paths(W0, phi0, t - s, potential, integ, incs)
    logG = full_log_weights(potential, logGc, params.n_steps(t - s), params.dt)
    samples = np.exp(logG) * phi(WT, params.torus)
    if not np.all(np.isfinite(samples)):
        raise NonFiniteWeightError("non-finite Feynman-Kac sample")
    est = FKEstimate(
        float(samples.mean()),
        float(samples.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0,
        n_paths,
    )
    return (est, samples) if return_samples else est


def fk_measure_apply(
    mu: WeightedEnsemble,
    t: float,
    h,
    *,
    potential: PotentialSpec,
    params: SimulationParams,
    forcing: ForcingSpec,
    noise: NoiseSpec | None,
    seed: int,
    purpose: tuple = (PURPOSE_FK, 1),
    stream0: int = 0,
) -> WeightedEnsemble:
    """Dual action on a finite measure: advance particles, multiply weights by path factors.

    The output total mass estimates the mass of the evolved measure.
    """
    integ = Integrator(params, forcing, noise)
    incs = EnsembleIncrements(seed, purpose, stream0, mu.n, noise.d) if noise is not None else None
    WT, logGc, _ = weighted_paths(mu.coeffs, _as_symbol_value(h), t, potential, integ, incs)
    logG = full_log_weights(potential, logGc, params.n_steps(t), params.dt)
    return WeightedEnsemble(mu.spec, WT, mu.weights * np.exp(logG))


def cocycle_residual(
    potential: PotentialSpec,
    s: float,
    t: float,
    h,
    test_set: Sequence[tuple[SpectralField, Callable[[np.ndarray, TorusSpec], np.ndarray]]],
    *,
    params: SimulationParams,
    forcing: ForcingSpec,
    noise: NoiseSpec | None,
    seed: int,
    n_outer: int = 64,
    n_inner: int = 32,
) -> dict:
    """Estimator discrepancy for the two-leg composition of the weighted operators.

    Compares the one-shot estimate over [0, s+t] against the nested estimate
    (outer leg [0, s] at h, inner leg [0, t] at beta_s h); the identity is
    exact, so the residual reflects Monte Carlo noise only.  Returns the max
    relative residual over the test set plus per-case detail.
    """
    integ = Integrator(params, forcing, noise)
    hval = _as_symbol_value(h)
    rows = []
    for case, (w, phi) in enumerate(test_set):
        n_flat = n_outer * n_inner
        est_a, _ = fk_apply(
            phi, 0.0, s + t, hval, w, n_flat,
            potential=potential, params=params, forcing=forcing, noise=noise,
            seed=seed, purpose=(PURPOSE_FK, 2, case, 0), return_samples=True,
        )
        incs_out = (
            EnsembleIncrements(seed, (PURPOSE_FK, 2, case, 1), 0, n_outer, noise.d)
            if noise is not None else None
        )
        W0 = np.broadcast_to(w.data, (n_outer, w.data.shape[0]))
        Ws, logGc_out, _ = weighted_paths(W0, hval, s, potential, integ, incs_out)
        logG_out = full_log_weights(potential, logGc_out, params.n_steps(s), params.dt)
        Wtile = np.repeat(Ws, n_inner, axis=0)
        incs_in = (
            EnsembleIncrements(seed, (PURPOSE_FK, 2, case, 2), 0, n_outer * n_inner, noise.d)
            if noise is not None else None
        )
        WT, logGc_in, _ = weighted_paths(
            Wtile, beta(hval, s), t, potential, integ, incs_in
        )
        logG_in = full_log_weights(potential, logGc_in, params.n_steps(t), params.dt)
        inner_vals = (np.exp(logG_in) * phi(WT, params.torus)).reshape(n_outer, n_inner).mean(axis=1)
        outer_samples = np.exp(logG_out) * inner_vals
        b_val = float(outer_samples.mean())
        b_se = float(outer_samples.std(ddof=1) / math.sqrt(n_outer))
        denom = max(abs(est_a.value), 1e-300)
        rows.append(
            {
                "case": case,
                "one_shot": est_a.value,
                "nested": b_val,
                "se_joint": math.hypot(est_a.std_error, b_se),
                "relative_residual": abs(est_a.value - b_val) / denom,
                "within_3se": abs(est_a.value - b_val) <= 3.0 * math.hypot(est_a.std_error, b_se) + 1e-12,
            }
        )
    return {"max_relative_residual": max(r["relative_residual"] for r in rows), "cases": rows}


# ---------------------------------------------------------------------------
# empirical probes for the non-implemented function-space properties
# ---------------------------------------------------------------------------

def growth_condition_probe(
    potential: PotentialSpec,
    q: float,
    radius: float,
    t_values: Sequence[float],
    probe_points: Sequence[SpectralField],
    ball_points: Sequence[SpectralField],
    *,
    params: SimulationParams,
    forcing: ForcingSpec,
    noise: NoiseSpec,
    seed: int,
    n_paths: int = 128,
) -> list[dict]:
    """Ratio sup_w P_t(1 + ||.||^{2q})(w) / m_q(w) against the ball sup of P_t 1.

    A plotted diagnostic over configurable (radius, q); no claim is made about
    the constants whose existence the theory asserts.
    """
    def m_q(W, spec):
        return 1.0 + sobolev_norm_batch(W, spec) ** (2.0 * q)

    rows = []
    for ti, t in enumerate(t_values):
        num = 0.0
        for pi, w in enumerate(probe_points):
            est = fk_apply(
                m_q, 0.0, t, 0.0, w, n_paths,
                potential=potential, params=params, forcing=forcing, noise=noise,
                seed=seed, purpose=(PURPOSE_FK, 3, ti, pi),
            )
            num = max(num, est.value / (1.0 + w.norm() ** (2.0 * q)))
        den = 0.0
        for pi, w in enumerate(ball_points):
            est = fk_apply(
                one, 0.0, t, 0.0, w, n_paths,
                potential=potential, params=params, forcing=forcing, noise=noise,
                seed=seed, purpose=(PURPOSE_FK, 4, ti, pi),
            )
            den = max(den, est.value)
        rows.append({"t": float(t), "q": q, "radius": radius, "ratio": num / max(den, 1e-300)})
    return rows


def feller_probe(
    potential: PotentialSpec,
    phi: Callable[[np.ndarray, TorusSpec], np.ndarray],
    pairs: Sequence[tuple[SpectralField, SpectralField]],
    t: float,
    *,
    params: SimulationParams,
    forcing: ForcingSpec,
    noise: NoiseSpec,
    seed: int,
    n_paths: int = 128,
) -> list[dict]:
    """Empirical Lipschitz quotients of the normalized weighted operator under coupled noise."""
    rows = []
    for ci, (w1, w2) in enumerate(pairs):
        ests = []
        for w in (w1, w2):
            ests.append(
                fk_apply(
                    phi, 0.0, t, 0.0, w, n_paths,
                    potential=potential, params=params, forcing=forcing, noise=noise,
                    seed=seed, purpose=(PURPOSE_FK, 5, ci),  # same streams: coupled
                )
            )
        dist = (w1 - w2).norm()
        rows.append(
            {
                "distance": dist,
                "quotient": abs(ests[0].value - ests[1].value) / max(dist, 1e-300),
                "se": math.hypot(ests[0].std_error, ests[1].std_error) / max(dist, 1e-300),
            }
        )
    return rows
