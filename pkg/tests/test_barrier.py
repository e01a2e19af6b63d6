import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from maxgraph import barrier as ba
from maxgraph.boundary_data import preset
from maxgraph.domain_grid import GraphField
from maxgraph.errors import InfeasibleFit, InvalidArgument
from maxgraph.lorentz_core import SpacetimeVector

from conftest import annulus, box, sinusoidal

params_strategy = st.builds(
    lambda n, m, K, L: ba.BarrierParams.at_origin(n, m, K, L),
    st.integers(1, 4),
    st.integers(1, 3),
    st.floats(0.1, 10.0),
    st.floats(-2.0, 0.0),
)


def catenoid_params(K=1.0):
    return ba.BarrierParams.at_origin(2, 1, K, 0.0)


def test_params_validation():
    with pytest.raises(InvalidArgument):
        ba.BarrierParams.at_origin(2, 1, 0.0, 0.0)
    with pytest.raises(InvalidArgument):
        ba.BarrierParams.at_origin(2, 1, 1.0, 0.5)
    assert catenoid_params().r_max == np.inf
    assert ba.BarrierParams.at_origin(2, 1, 1.0, -1.0).r_max == pytest.approx(np.sqrt(2))


def test_gauss_kronrod_rule_is_exact_on_polynomials():
    k, err = ba.gk15(lambda x: x**22 + 3 * x**5, -1.0, 1.0)
    assert k[0] == pytest.approx(2.0 / 23.0, abs=1e-15)
    # the embedded 7-point rule is exact to degree 13 only
    k, err = ba.gk15(lambda x: x**12, 0.0, 1.0)
    assert err[0] < 1e-15


def test_f_examples():
    p = catenoid_params()
    assert ba.f_eval(p, 0.0) == 0.0
    assert ba.f_eval(p, 1.0) == pytest.approx(np.arcsinh(1.0), abs=1e-12)
    assert ba.f_prime(p, 1.0) == pytest.approx(1 / np.sqrt(2), abs=1e-15)
    q = ba.BarrierParams.at_origin(2, 1, 1.0, -1.0)
    assert ba.f_prime(q, np.sqrt(2) * (1 - 1e-9)) == pytest.approx(0.0, abs=1e-8)
    assert ba.f_prime(p, 1e-8) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("r", [-0.1, np.sqrt(2), 2.0, np.nan])
def test_radius_range_checked(r):
    q = ba.BarrierParams.at_origin(2, 1, 1.0, -1.0)
    with pytest.raises(InvalidArgument):
        ba.f_eval(q, r)
    with pytest.raises(InvalidArgument):
        ba.f_prime(q, 0.0)


@pytest.mark.parametrize("n,K,L", [(2, 1.0, -1.0), (3, 0.5, -2.0), (1, 2.0, -0.3), (4, 3.0, 0.0)])
def test_f_eval_against_scipy_quad(n, K, L):
    p = ba.BarrierParams.at_origin(n, 1, K, L)
    top = min(p.r_max, 5.0)
    integrand = lambda t: (K + L * t**n / n) / np.sqrt(t ** (2 * n - 2) + (K + L * t**n / n) ** 2)  # noqa: E731
    radii = np.linspace(0, top, 12, endpoint=False)[1:]
    many = ba.f_eval_many(p, radii[::-1])[::-1]
    for r, fm in zip(radii, many):
        ref = quad(integrand, 0, r, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
        assert ba.f_eval(p, r) == pytest.approx(ref, abs=1e-12)
        assert fm == pytest.approx(ref, abs=1e-12)


def test_f_prime_is_integrand_derivative():
    p = ba.BarrierParams.at_origin(3, 2, 0.7, -0.8)
    for r in (0.2, 0.6, 1.1):
        h = 1e-5
        fd = (ba.f_eval(p, r + h) - ba.f_eval(p, r - h)) / (2 * h)
        assert fd == pytest.approx(ba.f_prime(p, r), abs=1e-9)
        fd2 = (ba.f_prime(p, r + h) - ba.f_prime(p, r - h)) / (2 * h)
        assert fd2 == pytest.approx(ba.f_second(p, r), abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(params_strategy, st.floats(0.01, 0.99))
def test_profile_bounds_and_ode(p, frac):
    top = min(p.r_max, 10 * p.K)
    r = frac * top
    f = ba.f_eval(p, r)
    fp = ba.f_prime(p, r)
    assert 0 < f < r
    assert 0 < fp < 1
    s = ba.shape_spectrum(p, r, f)
    # ODE in terms of the principal values
    assert abs(-(p.n - 1) * s.c1 - s.c3 - p.Lambda) <= 1e-9 * max(1.0, abs(s.c1), abs(s.c3))
    assert abs(ba.ode_residual(p, r)) <= 1e-9 * max(1.0, abs(s.c1) * p.n, abs(s.c3))


@settings(max_examples=40, deadline=None)
@given(params_strategy, st.floats(0.01, 0.99))
def test_shape_spectrum_ordering(p, frac):
    top = min(p.r_max, 10 * p.K)
    r = frac * top
    s = ba.shape_spectrum(p, r)
    # 1/(f sqrt(1-f'^2)) > f'/(r sqrt(1-f'^2)) > 0 >= Lambda > f''/(1-f'^2)^(3/2)
    assert s.c2 > -s.c1 > 0 >= p.Lambda
    assert p.Lambda > -s.c3 or (p.n == 1 and np.isclose(p.Lambda, -s.c3))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.floats(-2.0, 0.0), st.floats(0.2, 5.0), st.floats(1.01, 3.0), st.floats(0.05, 0.95))
def test_family_is_monotone_in_K(n, L, K1, factor, frac):
    p1 = ba.BarrierParams.at_origin(n, 1, K1, L)
    p2 = ba.BarrierParams.at_origin(n, 1, K1 * factor, L)
    top = min(p1.r_max, 10 * K1)
    r = frac * top
    assert ba.f_eval(p2, r) > ba.f_eval(p1, r)


def test_slice_mean_curvature_equals_minus_lambda():
    rng = np.random.default_rng(0)
    for n, m, K, L in [(2, 1, 1.0, 0.0), (2, 2, 0.5, -1.0), (3, 3, 2.0, -0.4)]:
        p = ba.BarrierParams.at_origin(n, m, K, L)
        top = p.r_max if np.isfinite(p.r_max) else 3.0
        for r in (0.2 * top, 0.7 * top):
            _, S, _ = ba.surface_frame(p, r)
            mixed = (rng.standard_normal((n, n)) + 3 * np.eye(n)) @ S
            assert ba.mean_curvature_over_plane(p, r, mixed) == pytest.approx(-L, abs=1e-10)


def test_random_planes_satisfy_lower_bound():
    rng = np.random.default_rng(1)
    worst = np.inf
    for _ in range(300):
        n, m = rng.integers(2, 4), rng.integers(1, 4)
        p = ba.BarrierParams.at_origin(n, m, rng.uniform(0.3, 3.0), rng.uniform(-2.0, 0.0))
        top = p.r_max if np.isfinite(p.r_max) else 3 * p.K
        r = rng.uniform(0.05, 0.95) * top
        f = ba.f_eval(p, r)
        H = ba.mean_curvature_over_plane(p, r, ba.random_spacelike_plane(p, r, rng), f)
        worst = min(worst, H + p.Lambda)
    assert worst >= -1e-8


def test_plane_validation():
    p = ba.BarrierParams.at_origin(2, 2, 1.0, -1.0)
    normal, S, T = ba.surface_frame(p, 0.5)
    with pytest.raises(InvalidArgument):
        ba.mean_curvature_over_plane(p, 0.5, np.vstack([S[0], normal]))  # not tangent
    with pytest.raises(InvalidArgument):
        ba.mean_curvature_over_plane(p, 0.5, np.vstack([S[0], T[0]]))  # contains a timelike vector
    with pytest.raises(InvalidArgument):
        ba.mean_curvature_over_plane(p, 0.5, S[:1])


def test_frame_is_orthonormal_and_tangent():
    p = ba.BarrierParams.at_origin(3, 2, 1.3, -0.5)
    normal, S, T = ba.surface_frame(p, 0.8)
    eta = np.diag([1.0] * 3 + [-1.0] * 2)
    assert normal @ eta @ normal == pytest.approx(-1.0)
    assert np.allclose(S @ eta @ S.T, np.eye(3), atol=1e-14)
    assert np.allclose(T @ eta @ T.T, -np.eye(1), atol=1e-14)
    assert np.allclose(np.vstack([S, T]) @ eta @ normal, 0, atol=1e-14)


def test_contains():
    p = ba.BarrierParams(1.0, -0.5, [0.2, -0.1], [1.0])
    assert ba.contains(p, SpacetimeVector([0.2, -0.1], [1.0]))
    r = 0.8
    on_cone = SpacetimeVector(p.xi + [r, 0], p.eta + [r])
    assert not ba.contains(p, on_cone)
    on_surface = SpacetimeVector(p.xi + [0, r], p.eta - [ba.f_eval(p, r)])
    assert ba.contains(p, on_surface)
    with pytest.raises(InvalidArgument):
        ba.contains(p, SpacetimeVector(p.xi + [5.0, 0], p.eta))


def test_comparison_check_cases():
    g = box((9, 9), ((-1, 1), (-1, 1)))
    zero = GraphField(g, np.zeros((g.num_nodes, 2)))
    p = ba.BarrierParams(10.0, -0.1, [0.0, 0.0], [0.0, 0.0])
    rep = ba.comparison_check(zero, p)
    assert rep.boundary_contained and rep.interior_contained and rep.consistent
    far = ba.BarrierParams(10.0, -0.1, [0.0, 0.0], [0.0, -50.0])
    rep = ba.comparison_check(zero, far)
    assert not rep.boundary_contained and rep.worst_violation > 0
    tight = ba.BarrierParams(1.0, -3.0, [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(InvalidArgument, match="node"):
        ba.comparison_check(zero, tight)


def test_fit_constant_data_is_symmetric():
    g = annulus(5, 16)
    bd = preset(g, "constant", m=1, value=[0.3])
    node = int(np.argmax(g.coords[:, 0]))
    p = ba.fit_boundary_barrier(node, [1.0], 0.05, -1.0, bd)
    # b = 0: the apex sits on the outward normal line at distance eps
    assert np.allclose(p.xi, [2.05, 0.0], atol=1e-14)
    assert p.eta[0] == pytest.approx(0.3 - ba.f_eval(p, 0.05), abs=1e-15)
    assert p.K == pytest.approx(20.0)


def closed_form_b(a, fp):
    # f'(eps) b / sqrt(1 + b^2) = a  =>  b = a / sqrt(fp^2 - a^2)
    return a / np.sqrt(fp * fp - a * a)


def test_fit_sinusoidal_tangency():
    g = box((17, 17))
    bd = sinusoidal(g)
    eps = 1e-2
    for node in g.boundary_nodes[[3, 20, 45, 60]]:
        for theta in ([1.0, 0.0], [0.0, 1.0], [0.6, -0.8]):
            p = ba.fit_boundary_barrier(int(node), theta, eps, -1.0, bd)
            assert p.tangency_residual <= 1e-8
            r0 = np.linalg.norm(g.coords[node] - p.xi)
            assert r0 == pytest.approx(eps, abs=1e-15)
            w = np.linalg.norm(bd.analytic(g.coords[node][None])[0] - p.eta)
            assert w == pytest.approx(ba.f_eval(p, eps), abs=1e-14)


def test_fit_b_matches_closed_form():
    g = annulus(9, 32)
    A = np.array([[0.0], [0.9]])
    bd = preset(g, "affine", m=1, A=A)
    node = int(np.argmax(g.coords[:, 0]))  # outer boundary point (2, 0), tangent e_y
    eps = 1e-3
    p = ba.fit_boundary_barrier(node, [1.0], eps, -1.0, bd)
    unit = ba.BarrierParams.at_origin(2, 1, 1 / eps, -1.0)
    b = closed_form_b(0.9, ba.f_prime(unit, eps))
    assert b > 0 and np.isfinite(b)
    expect = g.coords[node] - eps * (b * np.array([0.0, 1.0]) + np.array([-1.0, 0.0])) / np.sqrt(1 + b * b)
    assert np.allclose(p.xi, expect, atol=1e-12)


def test_fit_infeasible():
    g = annulus(9, 32)
    bd = preset(g, "affine", m=1, A=[[0.0], [0.999]])
    node = int(np.argmax(g.coords[:, 0]))
    with pytest.raises(InfeasibleFit, match="smaller eps"):
        ba.fit_boundary_barrier(node, [1.0], 0.5, -1.0, bd)


def test_fit_rejects_bad_inputs():
    g = annulus(5, 16)
    bd = preset(g, "constant", m=1)
    node = int(np.argmax(g.coords[:, 0]))
    with pytest.raises(InvalidArgument):
        ba.fit_boundary_barrier(node, [2.0], 0.1, -1.0, bd)
    with pytest.raises(InvalidArgument):
        ba.fit_boundary_barrier(node, [1.0], 0.1, 0.0, bd)
    with pytest.raises(InvalidArgument):
        ba.fit_boundary_barrier(int(g.interior_nodes[0]), [1.0], 0.1, -1.0, bd)


def test_frame_and_ambient_evaluations_agree():
    rng = np.random.default_rng(8)
    p = ba.BarrierParams.at_origin(3, 2, 1.5, -0.7)
    _, S, T = ba.surface_frame(p, 0.9)
    frame = np.vstack([S, T])
    for _ in range(20):
        C = ba.random_plane_coefficients(3, 2, rng)
        h_frame = ba.mean_curvature_in_frame(p, 0.9, C)
        h_ambient = ba.mean_curvature_over_plane(p, 0.9, C @ frame)
        assert h_frame == pytest.approx(h_ambient, abs=1e-10)
        assert h_frame >= -p.Lambda - 1e-10


def test_frame_evaluation_near_the_light_cone():
    # at small r the principal values are ~1e9, yet the slice stays exact in frame coordinates
    p = ba.BarrierParams.at_origin(3, 2, 3.0, -2.0)
    r = 1e-3 * p.r_max
    slice_coeffs = np.hstack([np.eye(3), np.zeros((3, 1))])
    assert ba.mean_curvature_in_frame(p, r, slice_coeffs) == pytest.approx(-p.Lambda, abs=1e-10 * ba.shape_spectrum(p, r).c3)
    with pytest.raises(InvalidArgument):
        ba.mean_curvature_in_frame(p, r, np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1.0]]))
