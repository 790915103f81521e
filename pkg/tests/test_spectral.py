"""Spatial operators: analytic single-mode identities, hand-convolution oracles, invariants."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fkns import (
    SpectralField,
    TorusSpec,
    biot_savart,
    inner,
    nonlinear_term,
    sobolev_norm,
    symmetrized_bracket,
)
from fkns.spectral import SpectralError, sobolev_norm_batch, tables_for

from oracles import advection_oracle, bracket_oracle, oracle_coeff


@pytest.fixture(scope="module")
def spec():
    return TorusSpec(8, 32)


def field(spec, modes):
    return SpectralField.from_modes(spec, modes)


def random_field(spec, seed, scale=1.0):
    return SpectralField.random(spec, np.random.default_rng(seed), scale=scale)


# ---------------------------------------------------------------------------
# torus spec validation
# ---------------------------------------------------------------------------

def test_torus_spec_invariants():
    with pytest.raises(SpectralError):
        TorusSpec(0, 32)
    with pytest.raises(SpectralError):
        TorusSpec(8, 31)          # odd grid
    with pytest.raises(SpectralError):
        TorusSpec(8, 16)          # N < 2(K+1)
    with pytest.raises(SpectralError):
        TorusSpec(8, 32, 1.0)     # dealias cutoff at Nyquist
    assert TorusSpec(8, 32).n_half_modes == 144


def test_field_validation(spec):
    with pytest.raises(SpectralError):
        field(spec, {(0, 0): 1.0})
    with pytest.raises(SpectralError):
        field(spec, {(9, 0): 1.0})
    with pytest.raises(SpectralError):
        field(spec, {(1, 0): 1.0, (-1, 0): 2.0})  # inconsistent conjugate pair
    w = field(spec, {(1, 0): 1.0, (-1, 0): 1.0})  # consistent real pair is fine
    assert w.coeff((1, 0)) == 1.0
    assert w.coeff((-1, 0)) == 1.0


# ---------------------------------------------------------------------------
# biot-savart
# ---------------------------------------------------------------------------

def test_biot_savart_single_shear_mode(spec):
    # w = cos(x1): u = (0, sin(x1)); checks the stated formula u_hat = i k_perp w_hat/|k|^2
    w = field(spec, {(1, 0): 0.5})
    u = biot_savart(w)
    assert u.component(1).norm() == 0.0
    assert u.component(2).coeff((1, 0)) == pytest.approx(-0.5j, abs=1e-15)
    # grid check: u2(x) = sin(x1)
    g = u.component(2).to_grid()
    xs = 2 * np.pi * np.arange(spec.grid_size) / spec.grid_size
    assert np.allclose(g[:, 0], np.sin(xs), atol=1e-12)


def test_biot_savart_zero(spec):
    u = biot_savart(SpectralField.zero(spec))
    assert u.component(1).norm() == 0.0 and u.component(2).norm() == 0.0


def test_biot_savart_sine_mode_against_grid_curl(spec):
    # w = sin(2 x2) -> u = (cos(2 x2)/2, 0); verify by hand formula and by grid curl inversion
    w = field(spec, {(0, 2): -0.5j})
    u = biot_savart(w)
    assert u.component(1).coeff((0, 2)) == pytest.approx(0.25, abs=1e-15)
    assert u.component(2).norm() == 0.0
    g1 = u.component(1).to_grid()
    xs = 2 * np.pi * np.arange(spec.grid_size) / spec.grid_size
    assert np.allclose(g1[0, :], 0.5 * np.cos(2 * xs), atol=1e-12)
    # curl on the collocation grid: d(u2)/dx1 - d(u1)/dx2 == w
    t = tables_for(spec)
    du1 = SpectralField(spec, (1j * t.k2 * u.component(1).data))
    curl = SpectralField.zero(spec) - du1
    assert np.allclose(curl.data, w.data, atol=1e-14)


def test_biot_savart_divergence_and_norm(spec):
    w = random_field(spec, 1)
    u = biot_savart(w)
    # k . k_perp = 0 over the integers; the stored components cancel to the last bit
    assert u.divergence_max() < 1e-16 * max(np.abs(u.u1).max(), np.abs(u.u2).max())
    # ||u|| = ||w||_{-1}
    unorm = math.hypot(u.component(1).norm(), u.component(2).norm())
    assert unorm == pytest.approx(sobolev_norm(w, -1.0), rel=1e-12)


# ---------------------------------------------------------------------------
# nonlinear term
# ---------------------------------------------------------------------------

def test_nonlinear_shear_is_zero(spec):
    assert nonlinear_term(field(spec, {(1, 0): 0.5})).norm() == 0.0


def test_nonlinear_single_shell_vanishes(spec):
    # modes of a common Laplacian shell advect themselves trivially
    w = field(spec, {(1, 0): 0.5, (0, 1): 0.5})
    assert nonlinear_term(w).norm() < 1e-15


def test_nonlinear_two_mode_convolution_oracle(spec):
    # distinct shells produce the hand-convolution value: support on (1, +-2)
    w = field(spec, {(1, 0): 0.5, (0, 2): 0.5})
    out = nonlinear_term(w)
    expect = advection_oracle({(1, 0): 0.5, (0, 2): 0.5}, {(1, 0): 0.5, (0, 2): 0.5})
    assert oracle_coeff(expect, (1, 2)) == pytest.approx(0.375, abs=1e-15)
    for k in [(1, 2), (1, -2), (2, 2), (1, 1)]:
        assert out.coeff(k) == pytest.approx(oracle_coeff(expect, k), abs=1e-12)


def test_nonlinear_random_against_oracle(spec):
    rng = np.random.default_rng(7)
    modes = {(1, 0): 0.3 + 0.1j, (2, 1): 0.2 - 0.05j, (0, 2): 0.15j, (3, -1): 0.1}
    w = field(spec, modes)
    out = nonlinear_term(w)
    expect = advection_oracle(modes, modes)
    t = tables_for(spec)
    for i, k in enumerate(t.modes):
        assert out.data[i] == pytest.approx(oracle_coeff(expect, k), abs=1e-12)


def test_nonlinear_output_mean_free_and_real(spec):
    w = random_field(spec, 3)
    out = nonlinear_term(w)
    # zero mean and conjugate symmetry are structural: the output is a valid field
    grid = out.to_grid()
    assert abs(grid.mean()) < 1e-13
    assert np.all(np.isreal(grid))


# ---------------------------------------------------------------------------
# symmetrized bracket
# ---------------------------------------------------------------------------

def test_bracket_self_identity(spec):
    w = random_field(spec, 11, scale=0.5)
    lhs = symmetrized_bracket(w, w)
    rhs = -2.0 * nonlinear_term(w)
    assert np.allclose(lhs.data, rhs.data, atol=1e-12)


def test_bracket_parallel_modes_zero(spec):
    u = field(spec, {(1, 0): 0.5})
    assert symmetrized_bracket(u, u).norm() == 0.0


def test_bracket_equal_shell_cancellation(spec):
    # |j| = |l| interaction coefficient vanishes identically
    u = field(spec, {(1, 0): 0.5})
    w = field(spec, {(0, 1): 0.5})
    assert symmetrized_bracket(u, w).norm() < 1e-15
    assert bracket_oracle({(1, 0): 0.5}, {(0, 1): 0.5}) == {}


def test_bracket_distinct_shell_oracle(spec):
    u_map, w_map = {(1, 0): 0.5}, {(1, 1): 0.5}
    out = symmetrized_bracket(field(spec, u_map), field(spec, w_map))
    expect = bracket_oracle(u_map, w_map)
    # coefficient (j_perp.l)(1/|j|^2 - 1/|l|^2) = (-1)(1 - 1/2) = -1/2 at (2,1), times amplitudes
    assert oracle_coeff(expect, (2, 1)) == pytest.approx(-0.125, abs=1e-15)
    for k in [(2, 1), (0, 1), (2, -1), (1, 1)]:
        assert out.coeff(k) == pytest.approx(oracle_coeff(expect, k), abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_bracket_bilinear_symmetric(seed_a, seed_b):
    spec = TorusSpec(4, 16)
    a = random_field(spec, seed_a, scale=0.4)
    b = random_field(spec, seed_b, scale=0.4)
    ab = symmetrized_bracket(a, b)
    ba = symmetrized_bracket(b, a)
    assert np.allclose(ab.data, ba.data, atol=1e-12)
    two_ab = symmetrized_bracket(2.0 * a, b)
    assert np.allclose(two_ab.data, 2.0 * ab.data, atol=1e-12)
    c = random_field(spec, seed_a ^ 0xABCDEF, scale=0.4)
    lhs = symmetrized_bracket(a + c, b)
    rhs_data = symmetrized_bracket(a, b).data + symmetrized_bracket(c, b).data
    assert np.allclose(lhs.data, rhs_data, atol=1e-12)


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

def test_sobolev_norm_single_mode(spec):
    # l2 convention: ||cos x1|| = 1/sqrt(2)
    w = field(spec, {(1, 0): 0.5})
    assert w.norm() == pytest.approx(1.0 / math.sqrt(2.0), rel=1e-14)
    assert SpectralField.zero(spec).norm() == 0.0
    assert SpectralField.zero(spec).norm(2.0) == 0.0


def test_sobolev_scaling(spec):
    w = field(spec, {(2, 0): 0.5})
    assert sobolev_norm(w, 2.0) == pytest.approx(4.0 * sobolev_norm(w, 0.0), rel=1e-14)


def test_parseval_roundtrip(spec):
    w = random_field(spec, 5)
    g = w.to_grid()
    spectral_sq = w.norm() ** 2
    grid_sq = float((g**2).mean())
    assert abs(grid_sq - spectral_sq) < 1e-10
    back = SpectralField.from_grid(spec, g)
    assert np.allclose(back.data, w.data, atol=1e-12)


def test_energy_orthogonality(spec):
    for seed in range(4):
        w = random_field(spec, seed)
        b = nonlinear_term(w)
        assert abs(inner(b, w)) < 1e-10


def test_batch_norm_matches_scalar(spec):
    w = random_field(spec, 9)
    out = sobolev_norm_batch(w.data[None], spec, 1.0)
    assert out[0] == pytest.approx(w.norm(1.0), rel=1e-14)


def test_immutability(spec):
    w = random_field(spec, 13)
    with pytest.raises(ValueError):
        w.data[0] = 1.0
