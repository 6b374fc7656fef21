import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinlab.estimators import (
    BinningSpec,
    EnsembleCounts,
    PhaseHistogram,
    bin_f1,
    bin_f2,
    bin_f3,
    cumulant_values,
    cumulants,
    distance_with_noise,
    e2_noise_floor,
    e2_norm,
    e3_noise_floor,
    empirical_field,
    fit_power_law,
    l1_distance,
)
from kinlab.phase import Configuration, ContractError, ModelParams
from kinlab.sampler import InitialDataSpec, RngStream, sample_configuration

SPEC = BinningSpec(2, -1.0, 1.0, 2, -1.0, 1.0, 2)  # 16 cells of volume 1
P = ModelParams(2, 0.5)  # mu = 2


def random_configs(seed, m=6, nmax=5):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(m):
        n = rng.integers(0, nmax + 1)
        out.append(Configuration(0.0, rng.uniform(-1.2, 1.2, (n, 2)), rng.uniform(-1.2, 1.2, (n, 2))))
    return out


def brute_counts(configs, order):
    """Ordered tuples of distinct particles per tuple of cells."""
    nc = SPEC.n_cells
    out = np.zeros((nc,) * order)
    for c in configs:
        idx = SPEC.flat_index(c.x, c.v)
        for tup in itertools.permutations(range(c.n), order):
            cells = idx[list(tup)]
            if np.all(cells >= 0):
                out[tuple(cells)] += 1
    return out


# ---------------------------------------------------------------- binning
def test_binning_geometry():
    assert SPEC.shape == (2, 2, 2, 2) and SPEC.n_cells == 16 and SPEC.cell_volume == 1.0
    idx = SPEC.flat_index(np.array([[-0.5, 0.5], [1.5, 0]]), np.array([[0.5, -0.5], [0, 0]]))
    assert idx[0] == np.ravel_multi_index((0, 1, 1, 0), SPEC.shape) and idx[1] == -1
    with pytest.raises(ContractError):
        BinningSpec(2, 0, 1, 100, 0, 1, 100)
    with pytest.raises(ContractError):
        BinningSpec(2, 1, 0, 2, 0, 1, 2)


def test_empirical_field_examples():
    c = Configuration(0.0, [[0.5, 0.5], [-0.5, 0.5]], [[0.5, 0.5], [0.5, 0.5]])
    assert empirical_field(c, lambda x, v: 1.0, P) == pytest.approx(1.0)
    assert empirical_field(c, lambda x, v: x[:, 0], P) == pytest.approx(0.0)
    table = np.arange(16.0)
    cells = SPEC.flat_index(c.x, c.v)
    assert empirical_field(c, table, P, SPEC) == pytest.approx(table[cells].sum() / 2)
    with pytest.raises(ContractError):
        empirical_field(c, table, P)


# ---------------------------------------------------------------- correlation functions
def test_single_member_single_cell_example():
    c = Configuration(0.0, [[0.5, 0.5]] * 3, [[0.5, 0.5]] * 3)
    a = SPEC.flat_index(c.x[:1], c.v[:1])[0]
    f1, f2, f3 = bin_f1([c], SPEC, P), bin_f2([c], SPEC, P), bin_f3([c], SPEC, P)
    assert f1.values[a] == pytest.approx(3 / 2)
    assert f2.values[a, a] == pytest.approx(6 / 4)
    assert f3.values[a, a, a] == pytest.approx(6 / 8)
    assert f1.mass() == pytest.approx(1.5) and f2.values.sum() == pytest.approx(1.5)
    assert f1.counts[a] == 3 and f2.counts[a, a] == 6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_tuple_counts_match_brute_force(seed):
    configs = random_configs(seed)
    for order, fn in ((1, bin_f1), (2, bin_f2), (3, bin_f3)):
        h = fn(configs, SPEC, P)
        np.testing.assert_allclose(h.counts, brute_counts(configs, order), atol=1e-9)
        np.testing.assert_allclose(h.values, h.counts / (P.mu ** order * len(configs)), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_exchangeability_and_marginals(seed):
    configs = random_configs(seed)
    ec = EnsembleCounts.from_configs(configs, SPEC, P)
    f2, f3 = ec.f2_values(), ec.f3_values()
    np.testing.assert_allclose(f2, f2.T)
    for perm in itertools.permutations(range(3)):
        np.testing.assert_allclose(f3, f3.transpose(perm), atol=1e-12)
    # summing out one slot leaves (n_in - 1) copies of the lower function
    inside = ec.counts.sum(1)
    weight2 = (ec.counts * (inside[:, None] - 1)).sum(0) / (P.mu ** 2 * ec.M)
    np.testing.assert_allclose(f2.sum(1), weight2, atol=1e-12)
    np.testing.assert_allclose(f3.sum(2), _pair_weight(ec), atol=1e-12)


def _pair_weight(ec):
    inside = ec.counts.sum(1)
    tot = np.zeros((ec.spec.n_cells,) * 2)
    for n, k in zip(ec.counts, inside):
        tot += (np.outer(n, n) - np.diag(n)) * (k - 2)
    return tot / (ec.mu ** 3 * ec.M)


def test_overflow_and_weights():
    c = Configuration(0.0, [[5.0, 5.0], [0.5, 0.5]], [[0, 0], [0.5, 0.5]])
    ec = EnsembleCounts.from_configs([c, c], SPEC, P)
    assert ec.overflow.tolist() == [1, 1] and ec.n_particles.tolist() == [2, 2]
    np.testing.assert_allclose(ec.f1_values([2, 0]), ec.f1_values())
    assert not ec.f1_values([0, 0]).any()


def test_histogram_roundtrip_and_csv():
    h = bin_f1(random_configs(3), SPEC, P)
    back = PhaseHistogram.from_bytes(h.to_bytes())
    np.testing.assert_array_equal(back.values, h.values)
    assert back.spec == SPEC and back.n_members == h.n_members
    lines = h.to_csv().splitlines()
    assert len(lines) == 17 and lines[0].endswith("value[order=1]")


# ---------------------------------------------------------------- cumulants
def test_cumulants_vanish_for_products():
    rng = np.random.default_rng(0)
    f1 = rng.random(5)
    e2, e3 = cumulant_values(f1, np.multiply.outer(f1, f1), np.einsum("a,b,c->abc", f1, f1, f1))
    assert np.abs(e2).max() < 1e-15 and np.abs(e3).max() < 1e-15


def test_cumulant_identities():
    rng = np.random.default_rng(1)
    f1 = rng.random(4)
    g = rng.random((4, 4))
    g = g + g.T
    f2 = np.multiply.outer(f1, f1) + g
    e2, e3 = cumulant_values(f1, f2, np.einsum("a,b,c->abc", f1, f1, f1))
    np.testing.assert_allclose(e2, g)
    # with f3 a pure product the third cumulant collects minus every pair correction
    expect = -(np.einsum("ab,c->abc", g, f1) + np.einsum("ac,b->abc", g, f1) + np.einsum("bc,a->abc", g, f1))
    np.testing.assert_allclose(e3, expect, atol=1e-14)


def test_cumulants_reject_mismatch():
    h1 = bin_f1(random_configs(1), SPEC, P)
    h2 = bin_f2(random_configs(1), BinningSpec(2, -1, 1, 2, -1, 1, 1), P)
    with pytest.raises(ContractError):
        cumulants(h1, h2)
    with pytest.raises(ContractError):
        cumulants(h1, h1)


def test_poisson_ensemble_is_near_mean_field():
    # independent Poisson draws: E2 is pure sampling noise and sits at its floor
    params = ModelParams(2, 1e-3)
    spec = InitialDataSpec("uniform-box-x-maxwellian-v", lo=(-1, -1), hi=(1, 1))
    configs = [sample_configuration(params, spec, RngStream(2, k)) for k in range(60)]
    bins = BinningSpec(2, -1, 1, 2, -2, 2, 2)
    ec = EnsembleCounts.from_configs(configs, bins, params)
    norm = e2_norm(ec)
    floor = e2_noise_floor(ec, 50, np.random.default_rng(0))
    assert norm < 3 * floor
    e1 = bin_f1(configs, bins, params)
    E2, _ = cumulants(e1, bin_f2(configs, bins, params))
    assert l1_distance(E2, PhaseHistogram(bins, 2, np.zeros((16, 16)))) == pytest.approx(norm)


def test_noise_floors_shrink_with_members():
    params = ModelParams(2, 0.01)
    spec = InitialDataSpec("uniform-box-x-maxwellian-v", lo=(-1, -1), hi=(1, 1))
    bins = BinningSpec(2, -1, 1, 2, -2, 2, 2)
    configs = [sample_configuration(params, spec, RngStream(3, k)) for k in range(160)]
    small = EnsembleCounts.from_configs(configs[:40], bins, params)
    big = EnsembleCounts.from_configs(configs, bins, params)
    rng = np.random.default_rng(0)
    assert e2_noise_floor(big, 40, rng) < e2_noise_floor(small, 40, rng)
    ref = np.full(16, 1 / 16)
    d_small, n_small = distance_with_noise(small, ref, 40, rng)
    d_big, n_big = distance_with_noise(big, ref, 40, rng)
    assert n_big < n_small and n_big > 0
    assert e3_noise_floor(EnsembleCounts.from_configs(configs[:20], BinningSpec(2, -1, 1, 1, -2, 2, 2), params),
                          10, rng) > 0


# ---------------------------------------------------------------- distances and fits
def test_l1_distance_examples():
    assert l1_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.5) == pytest.approx(1.0)
    with pytest.raises(ContractError):
        l1_distance(np.zeros(2), np.zeros(3), 1.0)
    with pytest.raises(ContractError):
        l1_distance(np.zeros(2), np.zeros(2))


@settings(max_examples=50)
@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6))
def test_l1_distance_is_a_metric(vals):
    a, b, c = np.array(vals[:2]), np.array(vals[2:4]), np.array(vals[4:])
    d = lambda p, q: l1_distance(p, q, 1.0)  # noqa: E731
    assert d(a, a) == 0 and d(a, b) == d(b, a)
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-12


def test_fit_power_law_exact():
    x = np.array([1e-2, 3e-3, 1e-3])
    slope, intercept, resid = fit_power_law(x, 5 * x ** 0.5)
    assert slope == pytest.approx(0.5, abs=1e-12)
    assert intercept == pytest.approx(np.log(5), abs=1e-12)
    assert resid < 1e-12
    with pytest.raises(ContractError):
        fit_power_law(x[:2], x[:2])
    with pytest.raises(ContractError):
        fit_power_law(x, -x)
