"""Torus grids, spectral calculus, reductions, manufactured data."""

import numpy as np
import pytest

from hktflow import cones, fields, oracles
from hktflow.errors import AdmissibilityError, MalformedInputError

rng = np.random.default_rng(3)


def grid_n1(points=16, active=(0, 1)):
    return fields.TorusGrid(1, tuple(active), (points,) * len(active))


def random_modesum(grid, n_modes=4, amp=0.3, wmax=None, rng=rng):
    modes = []
    for _ in range(n_modes):
        caps = [m // 4 if wmax is None else min(wmax, m // 4) for m in grid.points]
        wave = tuple(int(rng.integers(-c, c + 1)) for c in caps)
        modes.append(fields.Mode(amp * rng.uniform(0.2, 1.0), wave, rng.uniform(0, 2 * np.pi)))
    return fields.ModeSum(modes)


# --- grid bookkeeping ------------------------------------------------------


def test_grid_validation():
    with pytest.raises(MalformedInputError):
        fields.TorusGrid(1, (0, 0), (8, 8))  # repeated coordinate
    with pytest.raises(MalformedInputError):
        fields.TorusGrid(1, (1, 0), (8, 8))  # not increasing
    with pytest.raises(MalformedInputError):
        fields.TorusGrid(1, (0, 4), (8, 8))  # index 4 outside 4n for n=1
    with pytest.raises(MalformedInputError):
        fields.TorusGrid(1, (0, 1), (8, 12))  # 12 not a power of two


def test_grid_layout():
    g = fields.TorusGrid(2, (0, 1, 4, 6), (8, 8, 16, 8))
    assert g.shape == (8, 8, 16, 8)
    assert g.num_points == 8 * 8 * 16 * 8
    assert g.axis_of(4) == 2
    assert g.axis_of(2) is None  # inactive
    assert g.nyquist_sq_sum == 16 + 16 + 64 + 16
    assert fields.coordinate_label(6) == "x2^2"


def test_mode_validation():
    g = grid_n1(8)
    with pytest.raises(MalformedInputError):
        fields.ModeSum([fields.Mode(1.0, (4, 0))]).evaluate(g)  # at Nyquist
    with pytest.raises(MalformedInputError):
        fields.ModeSum([fields.Mode(1.0, (1,))]).evaluate(g)  # wave length


# --- first derivatives -----------------------------------------------------


def test_crf_derivative_axis0():
    g = grid_n1()
    u = fields.ModeSum([fields.Mode(1.0, (1, 0))]).evaluate(g)
    d = fields.crf_derivative(u, 1, "bar")
    x0 = g.coordinate_values(0)
    assert np.max(np.abs(d.values[0] + np.sin(x0))) < 1e-12
    assert np.max(np.abs(d.values[1:])) < 1e-13


def test_crf_derivative_axis1_lands_on_e1():
    g = grid_n1()
    u = fields.ModeSum([fields.Mode(1.0, (0, 1))]).evaluate(g)
    d = fields.crf_derivative(u, 1, "bar")
    x1 = g.coordinate_values(1)
    assert np.max(np.abs(d.values[1] + np.sin(x1))) < 1e-12
    assert np.max(np.abs(d.values[0])) < 1e-13
    # plain variant flips the sign of the imaginary slots
    dp = fields.crf_derivative(u, 1, "plain")
    assert np.max(np.abs(dp.values[1] - np.sin(x1))) < 1e-12


def test_crf_derivative_matches_finite_differences():
    g = fields.TorusGrid(1, (0, 1, 2, 3), (16, 16, 16, 16))
    u = random_modesum(g, n_modes=3, amp=0.2, wmax=2).evaluate(g)
    d = fields.crf_derivative(u, 1, "bar")
    for p in range(4):
        ref = oracles.fd_partial(u.values, g.axis_of(p), 16)
        # 4th order stencil truncation dominates (|w| <= 2 on 16 points)
        assert np.max(np.abs(d.values[p] - ref)) < 2e-2


def test_crf_spectral_exactness():
    # frequencies at or below Nyquist/2, symbolic comparison
    g = grid_n1(16)
    for _ in range(10):
        w = (int(rng.integers(-4, 5)), int(rng.integers(-4, 5)))
        ph = float(rng.uniform(0, 2 * np.pi))
        u = fields.ModeSum([fields.Mode(1.0, w, ph)]).evaluate(g)
        d = fields.crf_derivative(u, 1, "bar")
        arg = w[0] * g.coordinate_values(0) + w[1] * g.coordinate_values(1) + ph
        assert np.max(np.abs(d.values[0] + w[0] * np.sin(arg))) < 1e-11
        assert np.max(np.abs(d.values[1] + w[1] * np.sin(arg))) < 1e-11


# --- quaternionic Hessian --------------------------------------------------


def test_hessian_n1_cosine():
    g = grid_n1()
    u = fields.ModeSum([fields.Mode(1.0, (1, 0))]).evaluate(g)
    H = fields.q_hessian(u)
    x0 = g.coordinate_values(0)
    assert np.max(np.abs(H.values[0, 0, 0] + 0.25 * np.cos(x0))) < 1e-12
    assert np.max(np.abs(H.values[0, 0, 1:])) < 1e-13


def test_hessian_n1_is_quarter_laplacian():
    g = fields.TorusGrid(1, (0, 1, 2, 3), (16, 16, 16, 16))
    u = random_modesum(g).evaluate(g)
    H = fields.q_hessian(u)
    # spectral Laplacian via second derivatives of each mode, exact
    lap = np.zeros(g.shape)
    for axis in range(4):
        u_hat = fields.rfftn(u.values)
        k = g.freq(axis)
        lap += fields.irfftn(-(k**2) * u_hat, g.shape)
    scale = fields.sup_norm(u)
    assert np.max(np.abs(H.values[0, 0, 0] - 0.25 * lap)) < 1e-10 * scale


def test_hessian_n2_cross_term():
    g = fields.TorusGrid(2, (0, 4), (16, 16))
    u = fields.ModeSum([fields.Mode(1.0, (1, 1))]).evaluate(g)
    H = fields.q_hessian(u)
    x = g.coordinate_values(0) + g.coordinate_values(1)
    c = 0.25 * np.cos(x)
    assert np.max(np.abs(H.values[0, 1, 0] + c)) < 1e-12  # real part -cos/4
    assert np.max(np.abs(H.values[0, 1, 1:])) < 1e-13
    assert np.max(np.abs(H.values[0, 0, 0] + c)) < 1e-12
    assert np.max(np.abs(H.values[1, 1, 0] + c)) < 1e-12
    # mirror entry is the conjugate
    assert np.max(np.abs(H.values[1, 0, 0] - H.values[0, 1, 0])) == 0.0


def test_hessian_matches_finite_differences_n2():
    # cross-block couplings including the e3 slot, active x0^1,x1^1,x0^2,x2^2
    g = fields.TorusGrid(2, (0, 1, 4, 6), (16, 16, 16, 16))
    u = random_modesum(g, n_modes=3, amp=0.2, wmax=2).evaluate(g)
    H = fields.q_hessian(u)
    ref = oracles.fd_q_hessian(u)
    assert np.max(np.abs(H.values - ref)) < 2e-2


def test_hessian_hyperhermitian_and_linear():
    g = grid_n1(16)
    worst = 0.0
    for _ in range(100):
        u = random_modesum(g).evaluate(g)
        H = fields.q_hessian(u, measure_asymmetry=True)
        scale = max(fields.sup_norm(u), 1e-30)
        worst = max(worst, H.asymmetry / scale)
    assert worst <= 1e-9
    u = random_modesum(g).evaluate(g)
    v = random_modesum(g).evaluate(g)
    lin = fields.q_hessian(fields.ScalarField(g, 2.0 * u.values - 0.5 * v.values))
    combo = 2.0 * fields.q_hessian(u).values - 0.5 * fields.q_hessian(v).values
    assert np.max(np.abs(lin.values - combo)) < 1e-12


def test_laplacian():
    g = grid_n1()
    u = fields.ModeSum([fields.Mode(1.0, (1, 0))]).evaluate(g)
    lap = fields.q_laplacian(u)
    assert np.max(np.abs(lap.values + 0.25 * np.cos(g.coordinate_values(0)))) < 1e-12
    const = fields.ScalarField(g, np.full(g.shape, 3.7))
    assert np.max(np.abs(fields.q_laplacian(const).values)) == 0.0
    v = random_modesum(g).evaluate(g)
    total = float(np.sum(fields.q_laplacian(v).values))
    assert abs(total) < 1e-10 * fields.sup_norm(v) * v.grid.num_points


# --- reductions ------------------------------------------------------------


def test_mean_osc_basics():
    g = grid_n1(8)
    c = fields.ScalarField(g, np.full(g.shape, 2.5))
    assert fields.mean(c) == 2.5
    assert fields.osc(c) == 0.0
    u = fields.ModeSum([fields.Mode(1.0, (1, 0))]).evaluate(g)
    assert abs(fields.mean(u)) < 1e-14
    assert fields.osc(u) == pytest.approx(2.0, abs=1e-12)


def test_mean_fixed_tree_is_order_independent():
    x = rng.standard_normal(4096)
    ref = fields.pairwise_sum(x)
    # computing leaf blocks in any schedule feeds identical leaves to the tree
    leaves = fields.leaf_sums(x)
    order = rng.permutation(len(leaves))
    out = np.empty_like(leaves)
    for i in order:
        out[i] = x[i * fields.LEAF_BLOCK : (i + 1) * fields.LEAF_BLOCK].sum()
    assert np.array_equal(out, leaves)
    assert fields.combine_tree(out) == ref
    assert ref == fields.pairwise_sum(x.copy())


def test_grad_sup_norm():
    g = grid_n1()
    u = fields.ModeSum([fields.Mode(1.0, (1, 0))]).evaluate(g)
    # gradient is (-sin x0, 0): sup of Euclidean norm is 1
    assert fields.grad_sup_norm(u) == pytest.approx(1.0, abs=1e-12)


# --- manufactured data -----------------------------------------------------


def test_manufacture_h_zero_phi_star():
    g = grid_n1(8)
    omega = np.array([[[2.0, 0, 0, 0]]])
    op = cones.log_ma(1)
    h = fields.manufacture_h(op, omega, fields.ScalarField(g, np.zeros(g.shape)))
    assert np.max(np.abs(h.values - np.log(2.0))) < 1e-15


def test_manufacture_h_closed_form_n1():
    g = grid_n1(16)
    omega = np.array([[[1.0, 0, 0, 0]]])
    op = cones.log_ma(1)
    for a in (0.5, 2.0, 3.9):
        phi = fields.ModeSum([fields.Mode(a, (1, 0))]).evaluate(g)
        h = fields.manufacture_h(op, omega, phi)
        ref = np.log(1.0 - (a / 4.0) * np.cos(g.coordinate_values(0)))
        assert np.max(np.abs(h.values - ref)) < 1e-12
    with pytest.raises(AdmissibilityError):
        fields.manufacture_h(op, omega, fields.ModeSum([fields.Mode(4.0, (1, 0))]).evaluate(g))


def test_manufacture_h_self_consistent_n2():
    from hktflow import flow

    g = fields.TorusGrid(2, (0, 1, 4, 5), (8, 8, 8, 8))
    omega = np.zeros((2, 2, 4))
    omega[0, 0, 0] = omega[1, 1, 0] = 1.0
    op = cones.log_ma(2)
    phi = random_modesum(g, n_modes=2, amp=0.1).evaluate(g)
    h = fields.manufacture_h(op, omega, phi)
    problem = flow.FlowProblem(grid=g, op=op, omega=omega, h=h, phi0=phi)
    resid, margin = flow.rhs(problem, phi)
    assert margin > 0
    assert np.max(np.abs(resid.values)) < 1e-12


def test_wedge_normalization_pin():
    # symbolic wedge quotient equals sigma_k / C(n,k) for diagonal forms
    import math

    for n in (1, 2, 3):
        lam = rng.uniform(0.3, 2.0, size=n)
        for k in range(1, n + 1):
            got = oracles.wedge_sigma_quotient(lam, k)
            want = cones.sigma(k, lam) / math.comb(n, k)
            assert got == pytest.approx(want, rel=1e-12)
