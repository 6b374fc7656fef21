import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinlab.phase import (
    Configuration,
    ContractError,
    ModelParams,
    PhasePoint,
    collision_invariant_defect,
    l_inf1_norm,
    maxwellian,
    node_mesh,
    scatter,
    weighted_sup_norm,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def vec(d):
    return st.lists(finite, min_size=d, max_size=d).map(np.array)


@st.composite
def unit(draw, d=2):
    theta = draw(st.floats(0, 2 * np.pi))
    if d == 2:
        return np.array([np.cos(theta), np.sin(theta)])
    z = draw(st.floats(-1, 1))
    r = np.sqrt(1 - z * z)
    return np.array([r * np.cos(theta), r * np.sin(theta), z])


# ---------------------------------------------------------------- ModelParams / containers
def test_model_params_mu_is_derived():
    assert ModelParams(2, 1e-3).mu == pytest.approx(1000.0, rel=1e-15)
    assert ModelParams(3, 0.1).mu == pytest.approx(100.0, rel=1e-12)


@pytest.mark.parametrize("kw", [dict(d=1, eps=0.1), dict(d=2, eps=0.0), dict(d=2, eps=0.1, beta=-1)])
def test_model_params_rejects_bad_values(kw):
    with pytest.raises(ContractError):
        ModelParams(**kw)


def test_phase_point_rejects_nonfinite():
    with pytest.raises(ContractError):
        PhasePoint([0.0, np.nan], [0.0, 0.0])


def test_configuration_exclusion_check():
    c = Configuration(0.0, [[0, 0], [0.5, 0]], [[0, 0], [0, 0]])
    assert list(c.ids) == [0, 1]
    c.check_exclusion(0.5)
    with pytest.raises(ContractError):
        c.check_exclusion(0.6)


# ---------------------------------------------------------------- scatter
def test_scatter_head_on_exchange():
    v, vs = scatter([1, 0], [-1, 0], [1, 0])
    np.testing.assert_array_equal(v, [-1, 0])
    np.testing.assert_array_equal(vs, [1, 0])


def test_scatter_diagonal_hand_value():
    w = np.array([np.sqrt(2) / 2, np.sqrt(2) / 2])
    v, vs = scatter([1, 0], [0, 0], w)
    np.testing.assert_allclose(v, [0.5, -0.5], atol=1e-15)
    np.testing.assert_allclose(vs, [0.5, 0.5], atol=1e-15)
    assert v @ v + vs @ vs == pytest.approx(1.0, abs=1e-15)


@given(vec(2), unit())
def test_scatter_grazing_identity(v, w):
    vs = v - 3.0 * np.array([-w[1], w[0]])  # relative velocity orthogonal to w
    a, b = scatter(v, vs, w)
    np.testing.assert_allclose(a, v, atol=1e-12 * (1 + np.abs(v).max()))
    np.testing.assert_allclose(b, vs, atol=1e-12 * (1 + np.abs(v).max()))


def test_scatter_rejects_non_unit_omega():
    with pytest.raises(ContractError):
        scatter([1, 0], [0, 0], [1, 1])


@settings(max_examples=200)
@given(st.sampled_from([2, 3]).flatmap(lambda d: st.tuples(vec(d), vec(d), unit(d))))
def test_scatter_is_involution_and_conservative(args):
    v, vs, w = args
    a, b = scatter(v, vs, w)
    c, e = scatter(a, b, w)
    scale = 1 + np.abs(np.concatenate([v, vs])).max()
    np.testing.assert_allclose(c, v, atol=1e-14 * scale * 10)
    np.testing.assert_allclose(e, vs, atol=1e-14 * scale * 10)
    dp, de = collision_invariant_defect((v, vs), (a, b))
    assert np.abs(dp).max() <= 1e-12 * scale
    assert abs(de) <= 1e-12 * scale ** 2


def test_scatter_preserves_box_counts():
    rng = np.random.default_rng(1)
    n = 100_000
    v = rng.uniform(-1, 1, (n, 2))
    vs = rng.uniform(-1, 1, (n, 2))
    w = np.array([np.cos(0.3), np.sin(0.3)])
    a, b = scatter(v, vs, w)
    # image of the uniform law on the box B x B, counted in a sub-box
    inside = lambda p, q: np.all((np.abs(p) < 0.5), 1) & np.all((np.abs(q) < 0.5), 1)  # noqa: E731
    before = inside(v, vs).sum()
    after = inside(a, b).sum()
    se = np.sqrt(before)
    assert abs(after - before) <= 3 * np.sqrt(2) * se


# ---------------------------------------------------------------- invariant defect
def test_invariant_defect_examples():
    dp, de = collision_invariant_defect(([1, 0], [-1, 0]), scatter([1, 0], [-1, 0], [1, 0]))
    assert np.all(dp == 0) and de == 0
    w = np.array([np.sqrt(2) / 2, np.sqrt(2) / 2])
    dp, de = collision_invariant_defect(([1, 0], [0, 0]), scatter([1, 0], [0, 0], w))
    assert np.abs(dp).max() < 1e-15 and abs(de) < 1e-15
    dp, de = collision_invariant_defect(([1, 0], [0, 0]), ([1, 0], [1, 0]))
    assert de == 1.0
    np.testing.assert_array_equal(dp, [1, 0])


# ---------------------------------------------------------------- Maxwellian
def test_maxwellian_at_origin():
    assert maxwellian(1.0, [0.0, 0.0]) == pytest.approx(1 / (2 * np.pi), rel=1e-15)


def test_maxwellian_decreasing_in_speed():
    r = np.linspace(0, 20, 200)
    vals = maxwellian(0.7, np.stack([r, np.zeros_like(r)], 1))
    assert np.all(np.diff(vals) <= 0) and vals[-1] < 1e-50


def test_maxwellian_normalization_and_second_order_refinement():
    mass = maxwellian(1.0, node_mesh([np.linspace(-8, 8, 401)] * 2)).sum() * (16 / 400) ** 2
    assert abs(mass - 1) < 1e-6
    # on a window where truncation is negligible the midpoint rule is at least second order
    ax = lambda n: -3 + 6 / n * (np.arange(n) + 0.5)  # noqa: E731
    from scipy.special import erf

    exact = erf(3 / np.sqrt(2)) ** 2
    e = [abs(maxwellian(1.0, node_mesh([ax(n), ax(n)])).sum() * (6 / n) ** 2 - exact) for n in (8, 16, 32)]
    assert e[0] / e[1] > 3.5 and e[1] / e[2] > 3.5


# ---------------------------------------------------------------- weighted norms
def _vaxes(n=41, L=6.0):
    a = np.linspace(-L, L, n)
    return [a, a]


def test_weighted_sup_of_maxwellian():
    ax = _vaxes()
    f = maxwellian(1.3, node_mesh(ax))
    assert weighted_sup_norm(f, ax, 1.3) == pytest.approx(1.3 / (2 * np.pi), rel=1e-12)
    assert weighted_sup_norm(np.zeros_like(f), ax, 1.3) == 0.0


def test_weighted_sup_of_colder_maxwellian_peaks_at_origin():
    ax = _vaxes()
    beta = 0.8
    f = maxwellian(2 * beta, node_mesh(ax))
    scan = f * np.exp(0.5 * beta * np.sum(node_mesh(ax) ** 2, -1))
    assert np.unravel_index(scan.argmax(), scan.shape) == (20, 20)
    assert weighted_sup_norm(f, ax, beta) == pytest.approx((beta / np.pi) ** (2 / 2), rel=1e-12)


def _linf1_oracle(f, x_axes, v_axes, beta):
    w = np.exp(0.5 * beta * np.sum(node_mesh(v_axes) ** 2, -1))
    local = (np.abs(f) * w).max(axis=(-2, -1))
    xs = node_mesh(x_axes)
    total = 0.0
    for k0 in range(-5, 6):
        for k1 in range(-5, 6):
            m = (xs[..., 0] - k0) ** 2 + (xs[..., 1] - k1) ** 2 <= 1
            if m.any():
                total += local[m].max()
    return total


def test_linf1_norm_single_cell_indicator():
    xa = np.linspace(-3, 3, 61)
    va = _vaxes(21, 4.0)
    f = np.zeros((61, 61, 21, 21))
    M = maxwellian(1.0, node_mesh(va))
    f[33, 30] = M  # x = (0.3, 0.0)
    val = l_inf1_norm(f, [xa, xa], va, 1.0)
    # lattice points within distance 1 of (0.3, 0): (0,0), (1,0)
    assert val == pytest.approx(2 / (2 * np.pi), rel=1e-12)
    assert val == pytest.approx(_linf1_oracle(f, [xa, xa], va, 1.0), rel=1e-12)
    assert l_inf1_norm(2 * f, [xa, xa], va, 1.0) == pytest.approx(2 * val, rel=1e-14)
    assert l_inf1_norm(np.zeros_like(f), [xa, xa], va, 1.0) == 0.0


def test_linf1_norm_rejects_boundary_support():
    xa = np.linspace(-1, 1, 5)
    va = _vaxes(9, 2.0)
    f = np.zeros((5, 5, 9, 9))
    f[0, 2, 4, 4] = 1.0
    with pytest.raises(ContractError):
        l_inf1_norm(f, [xa, xa], va, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_linf1_norm_matches_scan_oracle(seed):
    rng = np.random.default_rng(seed)
    xa = np.linspace(-2.5, 2.5, 11)
    va = _vaxes(7, 2.0)
    f = np.zeros((11, 11, 7, 7))
    f[1:-1, 1:-1] = rng.random((9, 9, 7, 7)) * (rng.random((9, 9, 1, 1)) < 0.3)
    assert l_inf1_norm(f, [xa, xa], va, 0.5) == pytest.approx(_linf1_oracle(f, [xa, xa], va, 0.5), rel=1e-12)
