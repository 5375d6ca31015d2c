import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import fourier_potentials, max_divergence_ladder
from pdeflow.errors import GridMismatchError, ValidationError
from pdeflow.fields import (
    CholeskyField,
    DiffusivityParamIso,
    Potentials,
    cross_gradients,
    cross_gradients_vjp,
    diffusion_tensor_from_cholesky,
    diffusivity_iso,
    feature_maps,
    velocity_from_potentials,
)
from pdeflow.grid import Grid3, ScalarField, VectorField, d_axis


def _sf(g, a):
    return ScalarField(g, np.broadcast_to(a, g.dims).astype(float))


def test_unit_gradients_give_unit_z():
    g = Grid3((6, 6, 6), (1.2, 1.3, 1.0))
    x, y, _ = g.coords()
    v = velocity_from_potentials(Potentials(_sf(g, x), _sf(g, y))).values
    inner = (slice(1, -1),) * 3
    np.testing.assert_allclose(v[0][inner], 0, atol=1e-12)
    np.testing.assert_allclose(v[1][inner], 0, atol=1e-12)
    np.testing.assert_allclose(v[2][inner], 1, atol=1e-12)


def test_swap_negates(rng):
    g = Grid3((5, 6, 4))
    a, b = ScalarField(g, rng.standard_normal(g.dims)), ScalarField(g, rng.standard_normal(g.dims))
    v1 = velocity_from_potentials(Potentials(a, b)).values
    v2 = velocity_from_potentials(Potentials(b, a)).values
    assert np.array_equal(v1, -v2)


def test_closed_form_cross_product_second_order():
    errs = []
    for n in (16, 32):
        g = Grid3((n, n, n), (1.0 / n,) * 3)
        x, y, _ = g.coords()
        a = np.sin(2 * np.pi * x)
        b = np.cos(2 * np.pi * y)
        v = velocity_from_potentials(Potentials(_sf(g, a), _sf(g, b))).values
        # grad a = (2 pi cos(2 pi x), 0, 0), grad b = (0, -2 pi sin(2 pi y), 0)
        vz = -(2 * np.pi) ** 2 * np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y)
        inner = (slice(1, -1),) * 3
        errs.append(np.abs(v[2] - np.broadcast_to(vz, g.dims))[inner].max())
        assert np.abs(v[:2]).max() < 1e-9
    assert errs[0] / errs[1] > 3.5


def test_divergence_converges_under_refinement():
    m = max_divergence_ladder(0)
    assert m[0] / m[1] >= 1.7 and m[1] / m[2] >= 1.7


def test_cross_gradients_vjp_is_adjoint(rng):
    sp = (1.0, 1.2, 1.3)
    a, b = rng.standard_normal((2, 5, 4, 6))
    vbar = rng.standard_normal((3, 5, 4, 6))
    da, db = rng.standard_normal((2, 5, 4, 6))
    ga, gb = cross_gradients_vjp(a, b, vbar, sp)
    eps = 1e-6
    fd = (np.sum(vbar * cross_gradients(a + eps * da, b + eps * db, sp))
          - np.sum(vbar * cross_gradients(a - eps * da, b - eps * db, sp))) / (2 * eps)
    assert np.sum(ga * da) + np.sum(gb * db) == pytest.approx(fd, rel=1e-8)


def test_diffusivity_examples(rng):
    g = Grid3((4, 3, 2))
    assert np.all(diffusivity_iso(DiffusivityParamIso(_sf(g, 0.0))).values == 0)
    np.testing.assert_allclose(diffusivity_iso(DiffusivityParamIso(_sf(g, 0.1))).values, 0.01, rtol=1e-15)
    l = rng.standard_normal(g.dims)
    d = diffusivity_iso(DiffusivityParamIso(ScalarField(g, l))).values
    for idx in np.ndindex(g.dims):
        assert d[idx] == l[idx] * l[idx]


def test_cholesky_tensor():
    g = Grid3((2, 2, 1))
    one, zero = _sf(g, 1.0), _sf(g, 0.0)
    eye = diffusion_tensor_from_cholesky(CholeskyField(one, zero, zero, one, zero, one))
    np.testing.assert_array_equal(eye, np.broadcast_to(np.eye(3), g.dims + (3, 3)))
    t = diffusion_tensor_from_cholesky(CholeskyField(one, one, zero, one, zero, one))
    m = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    np.testing.assert_array_equal(t[0, 0, 0], m.T @ m)
    assert np.all(diffusion_tensor_from_cholesky(CholeskyField(*[zero] * 6)) == 0)
    with pytest.raises(ValidationError):
        CholeskyField(_sf(g, -1.0), zero, zero, one, zero, one)


def test_feature_map_examples():
    g = Grid3((2, 1, 1))
    v = np.zeros((3,) + g.dims)
    v[:, 0, 0, 0] = (3.0, 4.0, 0.0)
    v[:, 1, 0, 0] = (2.0, 0.0, 0.0)
    d = np.array([0.02, 0.02]).reshape(g.dims)
    fm = feature_maps(VectorField(g, v), ScalarField(g, d))
    assert fm.v_mag.values[0, 0, 0] == 5.0
    np.testing.assert_allclose([c.values[0, 0, 0] for c in fm.v_rgb], [0.6, 0.8, 0.0], rtol=1e-15)
    assert fm.peclet.values[1, 0, 0] == pytest.approx(100.0, rel=1e-12)
    fm0 = feature_maps(VectorField(g, np.zeros((3,) + g.dims)), ScalarField(g, d))
    assert np.all(fm0.peclet.values == 0)
    assert np.all(np.isposinf(fm0.inv_peclet.values))
    with pytest.raises(GridMismatchError):
        feature_maps(VectorField(g, v), ScalarField(Grid3((1, 2, 1)), d.reshape(1, 2, 1)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100))
def test_diffusivity_nonnegative(seed, scale):
    g = Grid3((4, 4, 3))
    l = scale * np.random.default_rng(seed).standard_normal(g.dims)
    assert diffusivity_iso(DiffusivityParamIso(ScalarField(g, l))).values.min() >= 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_rgb_unit_norm(seed):
    rng = np.random.default_rng(seed)
    g = Grid3((4, 3, 3))
    v = rng.standard_normal((3,) + g.dims)
    v[:, 0, 0, 0] = 0.0
    fm = feature_maps(VectorField(g, v), ScalarField(g, rng.random(g.dims)))
    s = sum(c.values**2 for c in fm.v_rgb)
    nz = fm.v_mag.values > 0
    np.testing.assert_allclose(s[nz], 1.0, atol=1e-12)
    assert s[0, 0, 0] == 0


def test_fourier_potentials_same_field_across_resolutions():
    p16, p32 = fourier_potentials(16, 3), fourier_potentials(32, 3)
    np.testing.assert_allclose(p16.gamma1.values, p32.gamma1.values[::2, ::2, ::2], atol=1e-12)


def test_planar_grid_uses_stream_function():
    g = Grid3((12, 10, 1), (1.0, 0.5, 1.0))
    x, y, _ = g.coords()
    psi = np.sin(0.3 * x) * np.cos(0.7 * y)
    v = cross_gradients(psi, np.zeros(g.dims), g.spacing)
    assert np.allclose(v[0], d_axis(psi, 1, 0.5))
    assert np.allclose(v[1], -d_axis(psi, 0, 1.0))
    assert np.all(v[2] == 0)
    # a uniform in-plane flow is psi = vx*y - vy*x
    v = cross_gradients(0.5 * y - 0.25 * x, np.zeros(g.dims), g.spacing)
    assert np.allclose(v[0], 0.5) and np.allclose(v[1], 0.25)


def test_planar_vjp_is_adjoint():
    rng = np.random.default_rng(3)
    g = Grid3((7, 6, 1))
    g1, g2, vbar = rng.normal(size=g.dims), rng.normal(size=g.dims), rng.normal(size=(3,) + g.dims)
    d1, d2 = rng.normal(size=g.dims), rng.normal(size=g.dims)
    b1, b2 = cross_gradients_vjp(g1, g2, vbar, g.spacing)
    eps = 1e-6
    fd = (np.sum(vbar * cross_gradients(g1 + eps * d1, g2 + eps * d2, g.spacing))
          - np.sum(vbar * cross_gradients(g1 - eps * d1, g2 - eps * d2, g.spacing))) / (2 * eps)
    assert abs(fd - np.sum(b1 * d1) - np.sum(b2 * d2)) < 1e-7 * max(1.0, abs(fd))
