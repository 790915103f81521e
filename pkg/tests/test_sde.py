"""Integrator contracts: exact decay, bitwise reproducibility, translation, moment bounds."""

import math

import numpy as np
import pytest

import fkns
from fkns import (
    BlowUpError,
    ForcingSpec,
    NoisePath,
    NoiseSpec,
    SimulationParams,
    SpectralField,
    TimeSymbol,
    TorusSpec,
    beta,
    homogenized_step,
    solve,
    step,
)
from fkns.sde import EnsembleIncrements, ensemble_square_norm, energy_budget_residual
from fkns.spectral import sobolev_norm_batch


@pytest.fixture(scope="module")
def w_shear(spec):
    return SpectralField.from_modes(spec, {(1, 0): 0.5})


# ---------------------------------------------------------------------------
# deterministic exactness
# ---------------------------------------------------------------------------

def test_heat_decay_exact(spec, w_shear):
    params = SimulationParams(1.0, 0.01, spec)
    traj = solve(w_shear, 0.0, 10.0, 0.0, None, params, ForcingSpec.zero(spec), None,
                 save_every=params.n_steps(10.0))
    ratio = traj.terminal.norm() / w_shear.norm()
    assert abs(ratio - math.exp(-10.0)) <= 1e-10 * math.exp(-10.0) + 1e-300


def test_zero_fixed_point(spec, params):
    w = SpectralField.zero(spec)
    out = step(w, 0.0, 0.0, params, ForcingSpec.zero(spec), None, None)
    assert out.norm() == 0.0


def test_solve_zero_duration(spec, params, forcing, noise, w_shear):
    traj = solve(w_shear, 1.0, 1.0, 0.5, NoisePath(1, 0), params, forcing, noise)
    assert len(traj) == 1
    assert np.array_equal(traj.terminal.data, w_shear.data)


def test_deterministic_self_convergence_order_one(spec):
    # two-mode deterministic run against a fine-dt reference: global first order
    w0 = SpectralField.from_modes(spec, {(1, 0): 0.4, (1, 1): 0.25j})
    forcing = ForcingSpec.default(spec, 0.5)
    T = 1.0

    def terminal(dt):
        params = SimulationParams(0.5, dt, spec)
        return solve(w0, 0.0, T, 0.3, None, params, forcing, None,
                     save_every=params.n_steps(T)).terminal

    ref = terminal(0.00125)
    errs = [np.linalg.norm(terminal(dt).data - ref.data) for dt in (0.02, 0.01, 0.005)]
    r1 = errs[0] / errs[1]
    r2 = errs[1] / errs[2]
    assert 1.5 < r1 < 3.0 and 1.5 < r2 < 3.0


def test_energy_budget_closes_at_first_order(spec):
    w0 = SpectralField.from_modes(spec, {(1, 0): 0.4, (2, 1): 0.2})
    forcing = ForcingSpec.default(spec, 0.5)
    res = [
        energy_budget_residual(w0, 0.7, 1.0, SimulationParams(0.5, dt, spec), forcing)
        for dt in (0.02, 0.01)
    ]
    assert 1.5 < res[0] / res[1] < 3.0


# ---------------------------------------------------------------------------
# randomness contracts
# ---------------------------------------------------------------------------

def test_bitwise_reproducibility(spec, params, forcing, noise, w_shear):
    a = solve(w_shear, 0.0, 1.0, 0.7, NoisePath(5, 2), params, forcing, noise).terminal
    b = solve(w_shear, 0.0, 1.0, 0.7, NoisePath(5, 2), params, forcing, noise).terminal
    assert np.array_equal(a.data, b.data)
    c = solve(w_shear, 0.0, 1.0, 0.7, NoisePath(5, 3), params, forcing, noise).terminal
    assert not np.array_equal(a.data, c.data)


def test_noise_path_increment_is_pure(spec):
    p = NoisePath(11, 4)
    v1 = p.increment(300, 4).copy()
    p2 = NoisePath(11, 4)
    # realizing a later block first must not change earlier values
    p2.increment(1000, 4)
    assert np.array_equal(p2.increment(300, 4), v1)


def test_translation_identity_bitwise(spec, params, forcing, noise):
    rng = np.random.default_rng(0)
    w0 = SpectralField.random(spec, rng, scale=0.3)
    for trial in range(20):
        s = float(rng.integers(0, 200)) * params.dt
        t = float(rng.integers(1, 100)) * params.dt
        h = float(rng.uniform(0.0, 2.0 * math.pi))
        path = NoisePath(77, trial)
        a = solve(w0, s, s + t, h, path, params, forcing, noise).terminal
        b = solve(w0, 0.0, t, beta(h, s), path, params, forcing, noise).terminal
        assert np.array_equal(a.data, b.data)


def test_homogenized_flow(spec, params, forcing, noise, w_shear):
    pair = (w_shear, TimeSymbol(0.4))
    out_w, out_h = homogenized_step(pair, 0.0, NoisePath(3, 0), params, forcing, noise)
    assert np.array_equal(out_w.data, w_shear.data) and out_h.value == pytest.approx(0.4)
    # symbol returns after a full period
    _, h2 = homogenized_step(pair, 2.0 * math.pi, None, params, ForcingSpec.zero(spec), None)
    assert abs(h2.value - 0.4) < 1e-12


def test_homogenized_composition_exact(spec, params, forcing, noise, w_shear):
    # one solve over [0, s+t] equals two chained solves when the increments are concatenated
    s, t = 0.5, 0.7
    path = NoisePath(9, 1)
    full = solve(w_shear, 0.0, s + t, 1.1, path, params, forcing, noise).terminal

    mid = solve(w_shear, 0.0, s, 1.1, path, params, forcing, noise).terminal

    class _Shifted:
        def __init__(self, base, off):
            self.base, self.off = base, off

        def increment(self, i, d):
            return self.base.increment(i + self.off, d)

    shifted = _Shifted(path, params.n_steps(s))
    second = solve(mid, s, s + t, 1.1, shifted, params, forcing, noise).terminal
    assert np.array_equal(full.data, second.data)


# ---------------------------------------------------------------------------
# statistical and safety contracts
# ---------------------------------------------------------------------------

def test_energy_moment_bound(spec, params, forcing, noise):
    # E ||Phi_t||^2 <= e^{-nu t} ||w0||^2 + C, with C fitted once from a stationary run
    w0 = SpectralField.from_modes(spec, {(1, 0): 1.0, (1, 1): 0.8j})
    c_fit, c_se = ensemble_square_norm(
        SpectralField.zero(spec), 0.0, 12.0, 128, params, forcing, noise, seed=101, purpose=(0, 1)
    )
    c_bound = c_fit + 3.0 * c_se
    for t in (2.0, 5.0):
        m, se = ensemble_square_norm(w0, 0.0, t, 256, params, forcing, noise, seed=102, purpose=(0, 2))
        bound = math.exp(-params.viscosity * t) * w0.norm() ** 2 + c_bound
        assert m <= bound + 3.0 * se


def test_blow_up_detection(spec):
    params = SimulationParams(1e-3, 0.02, spec)
    w0 = SpectralField.from_modes(spec, {(1, 0): 1.0, (1, 1): 1.0j, (2, 1): 1.0})
    big = ForcingSpec(spec, cos_terms=((0, SpectralField.from_modes(spec, {(1, 1): 4e4})),))
    with pytest.raises(BlowUpError):
        solve(w0, 0.0, 40.0, 0.0, None, params, big, None)


def test_duration_must_align_with_dt(spec, params, forcing):
    w = SpectralField.zero(spec)
    with pytest.raises(ValueError):
        solve(w, 0.0, 0.0301, 0.0, None, params, forcing, None)


def test_stability_budget_checked(spec):
    with pytest.raises(ValueError):
        SimulationParams(5.0, 0.1, spec)  # dt nu K^2 = 32 > budget


def test_params_validation(spec):
    with pytest.raises(ValueError):
        SimulationParams(-1.0, 0.01, spec)
    with pytest.raises(ValueError):
        SimulationParams(0.5, 0.0, spec)


def test_noise_spec_validation(spec):
    with pytest.raises(ValueError):
        NoiseSpec(())
    with pytest.raises(ValueError):
        NoiseSpec((SpectralField.zero(spec),))
    n = NoiseSpec.default(spec, 0.35)
    assert n.d == 4
    for g in n.coefficients:
        assert g.norm() == pytest.approx(0.35, rel=1e-12)


def test_forcing_is_h2(spec, forcing):
    assert forcing.sup_norm(2.0) < math.inf
    assert forcing.eval_hat(0.0).shape == (spec.n_half_modes,)
    ph = np.array([0.0, 1.0])
    assert forcing.eval_hat(ph).shape == (2, spec.n_half_modes)


def test_ensemble_increments_chunk_invariance(spec):
    # path i's draws depend only on (seed, purpose, stream0 + i), not on the batch split
    a = EnsembleIncrements(3, (1,), 0, 8, 4).step(5)
    b = EnsembleIncrements(3, (1,), 4, 4, 4).step(5)
    assert np.array_equal(a[4:], b)


def test_trajectory_observables(spec, params, forcing, noise, w_shear):
    traj = solve(
        w_shear, 0.0, 0.5, 0.0, NoisePath(1, 0), params, forcing, noise,
        observables={"energy": lambda W, s: sobolev_norm_batch(W, s) ** 2},
    )
    assert traj.observables["energy"].shape == (params.n_steps(0.5) + 1,)
    assert traj.observables["energy"][0] == pytest.approx(w_shear.norm() ** 2)
