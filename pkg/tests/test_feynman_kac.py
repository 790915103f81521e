"""Weighted-operator engine: exact identities, coupled comparisons, oracle agreement."""

import math

import numpy as np
import pytest

from fkns import (
    ForcingSpec,
    NoiseSpec,
    PotentialDictionary,
    PotentialSpec,
    SimulationParams,
    SpectralField,
    TorusSpec,
    WeightedEnsemble,
    cocycle_residual,
    fk_apply,
    fk_measure_apply,
)
from fkns.feynman_kac import (
    HProfile,
    NonFiniteWeightError,
    PotentialTerm,
    full_log_weights,
    one,
    squared_norm,
    weighted_paths,
)
from fkns.sde import EnsembleIncrements, Integrator, beta

from oracles import ChainGridOracle


@pytest.fixture(scope="module")
def w0(spec):
    return SpectralField.from_modes(spec, {(1, 0): 0.3, (1, 1): 0.2j})


@pytest.fixture(scope="module")
def dictionary(spec):
    return PotentialDictionary.default(spec)


@pytest.fixture(scope="module")
def vgen(dictionary):
    return dictionary.make([0.4, 0.3, -0.25, 0.2])


# ---------------------------------------------------------------------------
# potential construction
# ---------------------------------------------------------------------------

def test_hprofile_eval_and_bounds():
    p = HProfile(0.5, ((1, 0.3, 0.0), (2, 0.0, -0.4)))
    h = 0.7
    assert p.eval(h) == pytest.approx(0.5 + 0.3 * math.cos(h) - 0.4 * math.sin(2 * h))
    assert p.sup_bound() == pytest.approx(0.5 + 0.3 + 0.4)
    assert p.lipschitz() == pytest.approx(0.3 + 2 * 0.4)


def test_potential_bounds_hold_empirically(spec, vgen, rng):
    bound = vgen.bound()
    hs = rng.uniform(0, 2 * math.pi, 40)
    for seed in range(10):
        w = SpectralField.random(spec, np.random.default_rng(seed), scale=3.0)
        for h in hs[:4]:
            assert abs(vgen.value(w, h)) <= bound + 1e-12


def test_potential_h_modulus(spec, vgen, rng):
    lip = vgen.h_lipschitz()
    w = SpectralField.random(spec, rng, scale=1.0)
    hs = np.linspace(0, 2 * math.pi, 13)
    for h1 in hs[:6]:
        for h2 in hs[6:]:
            d = abs(vgen.value(w, h1) - vgen.value(w, h2))
            circle = min(abs(h1 - h2), 2 * math.pi - abs(h1 - h2))
            assert d <= lip * circle + 1e-12


def test_potential_validation():
    with pytest.raises(ValueError):
        PotentialTerm("bogus")
    with pytest.raises(ValueError):
        PotentialTerm("mode_re")
    with pytest.raises(ValueError):
        PotentialTerm("energy", None, -1.0)
    with pytest.raises(ValueError):
        PotentialSpec((PotentialTerm("energy", None, 1.0),), ())


def test_gradient_bound_positive(vgen):
    assert 0.0 < vgen.gradient_bound() < 10.0


# ---------------------------------------------------------------------------
# trivial identities (exact)
# ---------------------------------------------------------------------------

def test_unit_observable_v_zero_exact(system, w0):
    est = fk_apply(one, 0.0, 1.0, 0.0, w0, 64, potential=PotentialSpec.constant(0.0), seed=1, **system)
    assert est.value == 1.0
    assert est.std_error == 0.0


def test_constant_potential_exact(system, w0):
    est = fk_apply(one, 0.5, 2.5, 1.0, w0, 32, potential=PotentialSpec.constant(0.8), seed=1, **system)
    assert est.value == pytest.approx(math.exp(0.8 * 2.0), rel=1e-12)


def test_shift_covariance_per_path(system, w0, vgen):
    _, s1 = fk_apply(one, 0.0, 1.0, 0.4, w0, 32, potential=vgen, seed=3, return_samples=True, **system)
    _, s2 = fk_apply(one, 0.0, 1.0, 0.4, w0, 32, potential=vgen.shifted(0.6), seed=3,
                     return_samples=True, **system)
    assert np.allclose(s2, s1 * math.exp(0.6 * 1.0), rtol=1e-12)


def test_monotone_coupling(system, w0, vgen):
    # V1 <= V2 pointwise (add a positive constant): coupled per-path ordering
    _, s1 = fk_apply(squared_norm, 0.0, 1.0, 0.0, w0, 32, potential=vgen, seed=4,
                     return_samples=True, **system)
    _, s2 = fk_apply(squared_norm, 0.0, 1.0, 0.0, w0, 32, potential=vgen.shifted(0.3), seed=4,
                     return_samples=True, **system)
    assert np.all(s1 <= s2 * (1 + 1e-12))


def test_translation_identity_operator_level(system, w0, vgen):
    # P_{s, s+t, h} and P_{0, t, beta_s h} agree per path under shared increments
    s, t, h = 0.6, 0.9, 2.0
    _, a = fk_apply(squared_norm, s, s + t, h, w0, 24, potential=vgen, seed=6,
                    return_samples=True, **system)
    _, b = fk_apply(squared_norm, 0.0, t, beta(h, s), w0, 24, potential=vgen, seed=6,
                    return_samples=True, **system)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# dual action on measures
# ---------------------------------------------------------------------------

def test_measure_mass_preserved_v_zero(system, w0):
    mu = WeightedEnsemble.from_point(w0, 16, mass=1.0)
    out = fk_measure_apply(mu, 1.0, 0.0, potential=PotentialSpec.constant(0.0), seed=7, **system)
    assert out.total_mass == pytest.approx(1.0, abs=1e-14)


def test_measure_mass_constant_potential(system, w0):
    mu = WeightedEnsemble.from_point(w0, 16, mass=2.0)
    out = fk_measure_apply(mu, 1.5, 0.0, potential=PotentialSpec.constant(-0.4), seed=7, **system)
    assert out.total_mass == pytest.approx(2.0 * math.exp(-0.6), rel=1e-12)


def test_duality_cross_check(system, spec, vgen):
    # <P* mu, phi> and <mu, P phi> agree within joint error for a point mass
    w = SpectralField.from_modes(spec, {(1, 0): 0.25})
    t = 1.0
    n = 256
    mu = WeightedEnsemble.from_point(w, n, mass=1.0)
    pushed = fk_measure_apply(mu, t, 0.0, potential=vgen, seed=8, **system)
    lhs = pushed.total_mass * pushed.mean(squared_norm)
    est, samples = fk_apply(squared_norm, 0.0, t, 0.0, w, n, potential=vgen, seed=9,
                            return_samples=True, **system)
    se_lhs = np.std([wgt * v for (_, wgt), v in zip(pushed.particles(),
                     squared_norm(pushed.coeffs, spec))], ddof=1) * math.sqrt(n) / n
    joint = 3.0 * math.hypot(est.std_error, se_lhs)
    assert abs(lhs - est.value) <= joint + 1e-12


def test_weight_positivity(system, w0, vgen):
    mu = WeightedEnsemble.from_point(w0, 32)
    out = fk_measure_apply(mu, 1.0, 0.3, potential=vgen, seed=10, **system)
    assert np.all(out.weights > 0)


# ---------------------------------------------------------------------------
# cocycle property
# ---------------------------------------------------------------------------

def test_cocycle_trivial_cases(system, w0):
    res = cocycle_residual(PotentialSpec.constant(0.0), 0.0, 1.0, 0.2, [(w0, one)],
                           seed=11, n_outer=8, n_inner=4, **system)
    assert res["max_relative_residual"] == 0.0
    res = cocycle_residual(PotentialSpec.constant(0.5), 1.0, 1.0, 0.2, [(w0, one)],
                           seed=11, n_outer=8, n_inner=4, **system)
    assert res["max_relative_residual"] < 1e-12


def test_cocycle_generic_within_noise(system, w0, vgen):
    res = cocycle_residual(vgen, 1.0, 1.0, 0.7, [(w0, one), (w0, squared_norm)],
                           seed=12, n_outer=48, n_inner=24, **system)
    assert all(c["within_3se"] for c in res["cases"])


# ---------------------------------------------------------------------------
# linear-reduction oracle
# ---------------------------------------------------------------------------

def test_chain_oracle_agreement(spec):
    # nonlinearity off, one real noise mode: the weighted mass over [0, t] matches
    # the dense-grid operator built on the identical discretization
    dt, nu, sigma = 0.02, 0.5, 0.4
    params = SimulationParams(nu, dt, spec, include_nonlinearity=False)
    forcing = ForcingSpec.zero(spec)
    noise = NoiseSpec((SpectralField.from_modes(spec, {(1, 0): sigma / 2}),))
    gamma_c, c = 0.5, 4.0
    V = PotentialSpec((PotentialTerm("energy", None, c, HProfile(1.0)),), (-gamma_c,), 0.0)
    oracle = ChainGridOracle(nu, sigma / 2, dt, lambda x: -gamma_c * c * np.tanh(2 * x**2 / c))
    x0 = 0.15
    w0 = SpectralField.from_modes(spec, {(1, 0): x0})
    t = 2.0
    est = fk_apply(one, 0.0, t, 0.0, w0, 4096, potential=V,
                   params=params, forcing=forcing, noise=noise, seed=13)
    expect = oracle.finite_t_mass(x0, t)
    assert est.value == pytest.approx(expect, rel=0.01)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

def test_ensemble_invariants(spec, rng, w0):
    with pytest.raises(NonFiniteWeightError):
        WeightedEnsemble(spec, np.zeros((2, spec.n_half_modes), complex), np.array([1.0, -0.5]))
    ens = WeightedEnsemble.from_point(w0, 10, mass=3.0)
    assert ens.total_mass == pytest.approx(3.0, rel=1e-12)
    assert ens.ess() == pytest.approx(10.0)
    r = ens.resampled(20, rng)
    assert r.n == 20 and r.total_mass == pytest.approx(3.0, rel=1e-12)


def test_ensemble_mean_and_particles(spec, rng):
    fields = [SpectralField.random(spec, np.random.default_rng(i), scale=0.5) for i in range(5)]
    ens = WeightedEnsemble.from_fields(fields)
    vals = [f.norm() ** 2 for f in fields]
    assert ens.mean(squared_norm) == pytest.approx(np.mean(vals), rel=1e-12)
    ps = list(ens.particles())
    assert len(ps) == 5 and ps[0][1] == pytest.approx(0.2)


def test_weighted_paths_prefix_consistency(system, w0, vgen):
    # the recorded prefix at the final mark equals the full integral
    params = system["params"]
    integ = Integrator(params, system["forcing"], system["noise"])
    incs = EnsembleIncrements(5, (1, 9), 0, 8, system["noise"].d)
    n_unit = params.n_steps(1.0)
    W0 = np.tile(w0.data, (8, 1))
    WT, logGc, prefixes = weighted_paths(W0, 0.0, 2.0, vgen, integ, incs,
                                         record_steps=[0, n_unit, 2 * n_unit])
    assert np.allclose(prefixes[2 * n_unit], logGc, atol=1e-12)
    assert np.all(prefixes[0] == 0.0)
    full = full_log_weights(vgen, logGc, 2 * n_unit, params.dt)
    assert np.allclose(full, logGc, atol=1e-15)  # offset-free potential
