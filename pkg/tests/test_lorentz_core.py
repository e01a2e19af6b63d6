import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from maxgraph.errors import InvalidArgument
from maxgraph.lorentz_core import (
    CausalClass,
    Signature,
    SpacetimeVector,
    causal_class,
    induced_metric,
    lorentz_inner,
    margins,
    metric_batch,
    spacelike_margin,
    volume_density_grad,
    volume_density_hessian,
)


def test_lorentz_inner_examples():
    assert lorentz_inner(SpacetimeVector(1, 0), SpacetimeVector(1, 0)) == 1
    assert lorentz_inner(SpacetimeVector(1, 1), SpacetimeVector(1, 1)) == 0
    v = SpacetimeVector([1, 2], [3, 1])
    assert lorentz_inner(v, v) == -5


def test_lorentz_inner_mismatch():
    with pytest.raises(InvalidArgument):
        lorentz_inner(SpacetimeVector([1, 0], [1]), SpacetimeVector([1], [1]))


def test_signature_validation():
    with pytest.raises(InvalidArgument):
        Signature(0, 1)
    assert SpacetimeVector([1, 2], [3]).signature == Signature(2, 1)


def test_causal_class_examples():
    assert causal_class(SpacetimeVector(1, 0)) is CausalClass.SPACELIKE
    assert causal_class(SpacetimeVector(1, 1)) is CausalClass.NULL
    assert causal_class(SpacetimeVector(0.5, 1)) is CausalClass.TIMELIKE


def test_induced_metric_examples():
    m = induced_metric(np.zeros((2, 3)))
    assert np.array_equal(m.g, np.eye(2)) and m.det_g == 1.0
    m = induced_metric([[0.6]])
    assert m.g[0, 0] == pytest.approx(0.64, abs=1e-15)
    assert m.g_inv[0, 0] == pytest.approx(1.5625, abs=1e-14)
    m = induced_metric([[1.0]])
    assert m.min_eig == 0 and m.g_inv is None and not m.spacelike


def test_spacelike_margin_examples():
    assert spacelike_margin(np.zeros((2, 2))) == 1.0
    assert spacelike_margin([[0.6], [0.0]]) == pytest.approx(0.64, abs=1e-15)
    U, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((3, 3)))
    J = U[:, :2] @ np.diag([1.0, 0.3])
    assert spacelike_margin(J) == pytest.approx(0.0, abs=1e-14)


def gradients(n, m, scale=1.5):
    return arrays(float, (n, m), elements=st.floats(-scale, scale))


def rotation(rng, k):
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.data())
def test_margin_matches_min_eig(n, m, data):
    J = data.draw(gradients(n, m))
    assert (induced_metric(J).min_eig > 0) == (spacelike_margin(J) > 0) or abs(spacelike_margin(J)) < 1e-12
    assert induced_metric(J).min_eig == pytest.approx(spacelike_margin(J), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.data())
def test_metric_inverse_and_det(n, m, data):
    J = data.draw(gradients(n, m, scale=0.5))
    met = induced_metric(J)
    if not met.spacelike:
        return
    assert np.allclose(met.g, met.g.T, atol=1e-14)
    assert np.abs(met.g @ met.g_inv - np.eye(n)).max() < 1e-12
    assert 0 < met.det_g <= 1
    if np.abs(J).max() > 1e-6:  # below this det_g rounds to 1
        assert met.det_g < 1


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**32 - 1), st.data())
def test_causal_class_rotation_invariant(n, m, seed, data):
    x = data.draw(arrays(float, n, elements=st.floats(-3, 3)))
    y = data.draw(arrays(float, m, elements=st.floats(-3, 3)))
    v = SpacetimeVector(x, y)
    q = lorentz_inner(v, v)
    if abs(q) < 1e-9 * (x @ x + y @ y):
        return  # too close to the cone for rounding-free comparison
    rng = np.random.default_rng(seed)
    w = SpacetimeVector(rotation(rng, n) @ x, rotation(rng, m) @ y)
    assert causal_class(v) == causal_class(w)


def test_batched_forms_match_scalar():
    rng = np.random.default_rng(0)
    for n, m in [(1, 1), (2, 1), (2, 2), (3, 2), (2, 3)]:
        J = rng.uniform(-0.3, 0.3, (20, n, m))
        g, g_inv, sq = metric_batch(J)
        for e in range(20):
            met = induced_metric(J[e])
            assert np.allclose(g[e], met.g, atol=1e-15)
            assert np.allclose(g_inv[e], met.g_inv, atol=1e-13)
            assert sq[e] == pytest.approx(np.sqrt(met.det_g), abs=1e-14)
            assert margins(J[e : e + 1])[0] == pytest.approx(spacelike_margin(J[e]), abs=1e-14)


def test_density_derivatives_against_finite_differences():
    rng = np.random.default_rng(3)
    for n, m in [(2, 1), (2, 2), (3, 2)]:
        J = rng.uniform(-0.3, 0.3, (1, n, m))
        F, dF = volume_density_grad(J)
        H = volume_density_hessian(J)[0]
        eps = 1e-6
        for i in range(n):
            for a in range(m):
                E = np.zeros_like(J)
                E[0, i, a] = eps
                Fp, dFp = volume_density_grad(J + E)
                Fm, dFm = volume_density_grad(J - E)
                assert (Fp - Fm)[0] / (2 * eps) == pytest.approx(dF[0, i, a], abs=1e-9)
                assert np.allclose((dFp - dFm)[0] / (2 * eps), H[i, a], atol=1e-8)
