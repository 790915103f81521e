"""Bracket-closure filtration: trivial stalls, growth, span invariances, exactness."""

import numpy as np
import pytest

from fkns import SpectralField, TorusSpec, bracket_closure, exact_bracket, symmetrized_bracket
from fkns.hormander import (
    field_to_real,
    real_to_field,
    saturation_dimension,
    subspaces_equal,
)

from oracles import bracket_oracle, oracle_coeff


@pytest.fixture(scope="module")
def spec4():
    return TorusSpec(4, 16)


def f(spec, modes):
    return SpectralField.from_modes(spec, modes)


def test_empty_noise_dimension_zero(spec4):
    closure = bracket_closure([], spec4, max_levels=4)
    assert [r.dimension for r in closure.levels] == [0]
    assert closure.stalled and not closure.saturated
    assert closure.final_dimension == 0


def test_single_mode_stays_one(spec4):
    closure = bracket_closure([f(spec4, {(1, 0): 0.5})], spec4, max_levels=5)
    assert all(r.dimension == 1 for r in closure.levels)
    assert closure.stalled and not closure.saturated


def test_two_mode_growth_at_k4(spec4):
    noise = [f(spec4, {(1, 0): 0.5}), f(spec4, {(1, 1): 0.5})]
    closure = bracket_closure(noise, spec4, max_levels=8)
    dims = [r.dimension for r in closure.levels]
    # regression-frozen sequence: strictly increasing until the stall
    assert dims == [2, 3, 6, 18, 35, 40, 40]
    grow = [b - a for a, b in zip(dims, dims[1:])]
    assert all(g > 0 for g in grow[:-1])
    assert closure.stalled and not closure.saturated
    # cosine pair fields generate exactly the even-parity sector of the truncated space
    assert closure.final_dimension == 40 == saturation_dimension(spec4) // 2


def test_mixed_parity_default_noise_saturates(spec4):
    # single-mode-pair fields with both cos and sin content escape the parity trap
    from fkns import NoiseSpec

    noise = NoiseSpec.default(spec4, 1.0)
    closure = bracket_closure(noise, spec4, max_levels=8)
    assert closure.saturated
    assert closure.final_dimension == saturation_dimension(spec4) == 80


def test_exact_bracket_matches_oracle(spec4):
    u_map = {(1, 0): 0.3 + 0.2j, (2, 1): -0.1j}
    w_map = {(1, 1): 0.25, (0, 2): 0.4j}
    out = exact_bracket(f(spec4, u_map), f(spec4, w_map))
    expect = bracket_oracle(u_map, w_map)
    for k in [(2, 1), (0, 1), (1, 2), (3, 2), (2, 3), (1, -1), (2, -1)]:
        if max(abs(k[0]), abs(k[1])) <= 4:
            assert out.coeff(k) == pytest.approx(oracle_coeff(expect, k), abs=1e-13)


def test_exact_bracket_matches_pseudo_spectral(spec4):
    # two independent routes to the same bilinear form (alias-free regime)
    rng = np.random.default_rng(5)
    u = SpectralField.random(spec4, rng, scale=0.4)
    w = SpectralField.random(spec4, rng, scale=0.4)
    a = exact_bracket(u, w)
    b = symmetrized_bracket(u, w)
    assert np.allclose(a.data, b.data, atol=1e-12)


def test_permutation_invariance(spec4):
    noise = [f(spec4, {(1, 0): 0.5}), f(spec4, {(1, 1): 0.5}), f(spec4, {(0, 1): 0.3j})]
    c1 = bracket_closure(noise, spec4, max_levels=4)
    c2 = bracket_closure(noise[::-1], spec4, max_levels=4)
    for r1, r2 in zip(c1.levels, c2.levels):
        assert r1.dimension == r2.dimension
        assert subspaces_equal(r1.basis, r2.basis, tol=1e-8)


def test_scaling_invariance(spec4):
    noise = [f(spec4, {(1, 0): 0.5}), f(spec4, {(1, 1): 0.5})]
    scaled = [3.0 * noise[0], -0.2 * noise[1]]
    c1 = bracket_closure(noise, spec4, max_levels=4)
    c2 = bracket_closure(scaled, spec4, max_levels=4)
    for r1, r2 in zip(c1.levels, c2.levels):
        assert r1.dimension == r2.dimension
        assert subspaces_equal(r1.basis, r2.basis, tol=1e-8)


def test_level_two_support_arithmetic(spec4):
    # level-2 members live on sums/differences of level-1 wavenumbers
    noise = [f(spec4, {(1, 0): 0.5}), f(spec4, {(1, 1): 0.5})]
    closure = bracket_closure(noise, spec4, max_levels=2)
    allowed = set()
    waves = [(1, 0), (-1, 0), (1, 1), (-1, -1)]
    for a in waves:
        for b in waves:
            allowed.add((a[0] + b[0], a[1] + b[1]))
    from fkns.spectral import tables_for

    t = tables_for(spec4)
    added = closure.levels[1].basis[closure.levels[0].dimension:]
    for row in added:
        z = real_to_field(row)
        support = {t.modes[i] for i in np.nonzero(np.abs(z) > 1e-10)[0]}
        for k in support:
            assert k in allowed or (-k[0], -k[1]) in allowed


def test_basis_orthonormal(spec4):
    from fkns import NoiseSpec

    closure = bracket_closure(NoiseSpec.default(spec4, 1.0), spec4, max_levels=6)
    B = closure.levels[-1].basis
    gram = B @ B.T
    assert np.allclose(gram, np.eye(B.shape[0]), atol=1e-10)


def test_real_vectorization_preserves_inner_product(spec4):
    from fkns.spectral import inner

    rng = np.random.default_rng(3)
    u = SpectralField.random(spec4, rng)
    w = SpectralField.random(spec4, rng)
    xu, xw = field_to_real(u.data), field_to_real(w.data)
    assert float(xu @ xw) == pytest.approx(inner(u, w), rel=1e-12)


def test_basis_fields_roundtrip(spec4):
    noise = [f(spec4, {(1, 0): 0.5}), f(spec4, {(1, 1): 0.5})]
    closure = bracket_closure(noise, spec4, max_levels=3)
    fields = closure.basis_fields(1)
    assert len(fields) == 2
    assert fields[0].norm() == pytest.approx(1.0, rel=1e-12)


def test_csv_rows_shape(spec4):
    closure = bracket_closure([f(spec4, {(1, 0): 0.5})], spec4, max_levels=5)
    rows = closure.csv_rows()
    assert rows[0] == (1, 1, 1)
    assert all(len(r) == 3 for r in rows)
