import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdeflow.errors import GridMismatchError, ValidationError
from pdeflow.grid import (
    BoundaryClass,
    DomainMask,
    Grid3,
    ScalarField,
    Scheme,
    VectorField,
    d_axis,
    d_axis_T,
    divergence_fd,
    gaussian_smooth,
    grad_fd,
)

SCHEMES = list(Scheme)


def test_grid_validation():
    with pytest.raises(ValidationError):
        Grid3((0, 4, 4))
    with pytest.raises(ValidationError):
        Grid3((4, 4, 4), (1.0, -1.0, 1.0))
    with pytest.raises(GridMismatchError):
        ScalarField(Grid3((4, 4, 4)), np.zeros((4, 4, 3)))


def test_linear_field_gradient():
    g = Grid3((8, 8, 8), (1.3, 1.0, 0.7))
    x, _, _ = g.coords()
    f = ScalarField(g, np.broadcast_to(x, g.dims))
    v = grad_fd(f, Scheme.CENTRAL).values
    np.testing.assert_allclose(v[0][1:-1, 1:-1, 1:-1], 1.0, atol=1e-12)
    np.testing.assert_allclose(v[1:], 0.0, atol=1e-12)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_constant_field_zero_gradient(scheme):
    g = Grid3((5, 4, 3))
    assert np.all(grad_fd(ScalarField(g, np.full(g.dims, 2.5)), scheme).values == 0)


def test_hand_one_sided_stencils():
    f = np.array([0.0, 1.0, 0.0]).reshape(3, 1, 1)
    assert d_axis(f, 0, 1.0, "backward")[1, 0, 0] == 1.0
    assert d_axis(f, 0, 1.0, "forward")[1, 0, 0] == -1.0


def test_divergence_examples():
    g = Grid3((6, 6, 6), (1.0, 1.2, 1.3))
    const = np.broadcast_to(np.array([1.0, 2.0, 3.0])[:, None, None, None], (3,) + g.dims)
    assert np.all(divergence_fd(VectorField(g, const)).values == 0)
    x, _, _ = g.coords()
    v = np.zeros((3,) + g.dims)
    v[0] = x
    div = divergence_fd(VectorField(g, v)).values
    np.testing.assert_allclose(div[1:-1, 1:-1, 1:-1], 1.0, atol=1e-12)


def test_central_second_order():
    errs = []
    for n in (16, 32, 64):
        g = Grid3((n, 1, 1), (1.0 / n, 1.0, 1.0))
        x = g.coords()[0]
        f = np.sin(2 * np.pi * x)
        d = d_axis(f, 0, g.spacing[0])
        exact = 2 * np.pi * np.cos(2 * np.pi * x)
        errs.append(np.abs(d - exact)[1:-1].max())
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


@pytest.mark.parametrize("scheme", SCHEMES)
@pytest.mark.parametrize("n", [1, 2, 3, 7])
def test_d_axis_transpose_is_adjoint(scheme, n, rng):
    f = rng.standard_normal((n, 4, 3))
    g = rng.standard_normal((n, 4, 3))
    for axis in range(3):
        lhs = np.sum(g * d_axis(f, axis, 0.7, scheme))
        rhs = np.sum(d_axis_T(g, axis, 0.7, scheme) * f)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_smoothing_identity_and_constants(rng):
    g = Grid3((7, 6, 5))
    f = ScalarField(g, rng.standard_normal(g.dims))
    assert np.array_equal(gaussian_smooth(f, 0.0).values, f.values)
    c = ScalarField(g, np.full(g.dims, 3.0))
    for edge in ("reflect", "renormalize"):
        np.testing.assert_allclose(gaussian_smooth(c, 2.0, edge).values, 3.0, rtol=1e-12)


def test_smoothing_impulse_matches_direct_kernel():
    n, sigma = 33, 0.6
    g = Grid3((n, n, n))
    f = np.zeros(g.dims)
    f[16, 16, 16] = 1.0
    out = gaussian_smooth(ScalarField(g, f), sigma).values
    r = math.ceil(3 * sigma)
    taps = np.arange(-r, r + 1)
    w = np.exp(-0.5 * (taps / sigma) ** 2)
    w /= w.sum()
    expected = np.zeros(g.dims)
    sl = slice(16 - r, 16 + r + 1)
    expected[sl, sl, sl] = w[:, None, None] * w[None, :, None] * w[None, None, :]
    np.testing.assert_allclose(out, expected, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 3.0), st.sampled_from(SCHEMES),
       st.floats(-5, 5), st.floats(-5, 5))
def test_stencil_linearity(seed, h, scheme, a, b):
    rng = np.random.default_rng(seed)
    g = Grid3((5, 4, 3), (h, h, h))
    f, k = rng.standard_normal(g.dims), rng.standard_normal(g.dims)
    lhs = grad_fd(ScalarField(g, a * f + b * k), scheme).values
    rhs = a * grad_fd(ScalarField(g, f), scheme).values + b * grad_fd(ScalarField(g, k), scheme).values
    scale = max(1.0, np.abs(rhs).max())
    assert np.abs(lhs - rhs).max() <= 1e-12 * scale


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 3.0))
def test_smoothing_mass_and_positivity(seed, sigma):
    rng = np.random.default_rng(seed)
    g = Grid3((9, 7, 5))
    f = rng.random(g.dims)
    out = gaussian_smooth(ScalarField(g, f), sigma).values
    assert out.sum() == pytest.approx(f.sum(), rel=1e-12)
    assert out.min() >= 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([(6, 5, 4), (5, 5, 1), (4, 3, 3)]), st.booleans())
def test_mask_classification_is_partition(seed, dims, slabs):
    rng = np.random.default_rng(seed)
    g = Grid3(dims)
    inside = rng.random(dims) < 0.7
    m = DomainMask.from_inside(g, inside, slabs)
    classes = [m.boundary_class == c for c in BoundaryClass]
    total = sum(c.astype(int) for c in classes)
    assert np.all(total == 1)
    assert np.array_equal(m.boundary_class != BoundaryClass.OUTSIDE, inside)
    nz = dims[2]
    for idx in zip(*np.nonzero(inside)):
        on_slab = slabs and idx[2] in (0, nz - 1)
        if on_slab:
            assert m.boundary_class[idx] == BoundaryClass.DIRICHLET_SLAB
            continue
        edge = False
        for a in range(3):
            if dims[a] == 1:
                continue
            for s in (-1, 1):
                j = list(idx)
                j[a] += s
                if not 0 <= j[a] < dims[a] or not inside[tuple(j)]:
                    edge = True
        want = BoundaryClass.NEUMANN_CONTOUR if edge else BoundaryClass.INTERIOR
        assert m.boundary_class[idx] == want


def test_slabs_default_off_for_thin_grids():
    assert not DomainMask.from_inside(Grid3((4, 4, 1))).dirichlet.any()
    assert DomainMask.from_inside(Grid3((4, 4, 3))).dirichlet[:, :, 0].all()
