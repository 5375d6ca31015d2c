"""Shared constructions for the test suite."""

import numpy as np

from pdeflow.fields import Potentials
from pdeflow.grid import Grid3, ScalarField

# criterion number -> one-line verdict, printed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)


def fourier_potentials(n: int, seed: int = 0, modes: int = 4) -> Potentials:
    """Smooth random potentials on the unit cube sampled with ``n`` points per axis.

    The same seed gives the same continuous fields at every resolution, so
    refinement studies compare like with like.
    """
    rng = np.random.default_rng(seed)
    g = Grid3((n, n, n), (1.0 / n,) * 3)
    x, y, z = g.coords()
    out = []
    for _ in range(2):
        f = np.zeros(g.dims)
        for _ in range(modes):
            k = rng.uniform(0.5, 1.0, size=3) * 2 * np.pi
            ph = rng.uniform(0, 2 * np.pi, size=3)
            f = f + rng.standard_normal() * np.sin(k[0] * x + ph[0]) * np.sin(k[1] * y + ph[1]) * np.sin(k[2] * z + ph[2])
        out.append(ScalarField(g, f))
    return Potentials(out[0], out[1])


def max_divergence_ladder(seed: int = 0, sizes=(16, 32, 64)):
    from pdeflow.fields import velocity_from_potentials
    from pdeflow.grid import divergence_fd

    return [float(np.abs(divergence_fd(velocity_from_potentials(fourier_potentials(n, seed))).values).max())
            for n in sizes]


def random_instance(seed: int, dims=(8, 8, 4), t_pd: int = 3, scale: float = 0.2, mode="advdiff",
                    integrator="rk45", dt=0.25, lambdas=(0.1, 0.1)):
    """Random parameters and measured frames for gradient checks."""
    from pdeflow.dataio import VolumeSeries
    from pdeflow.grid import DomainMask
    from pdeflow.loss import LossConfig, TrainingSample
    from pdeflow.solver import SolverConfig

    rng = np.random.default_rng(seed)
    g = Grid3(dims, (1.0, 1.1, 1.2))
    inside = rng.random(dims) < 0.85
    mask = DomainMask.from_inside(g, inside)
    theta = [np.where(inside, scale * rng.standard_normal(dims), 0.0) for _ in range(3)]
    frames = np.where(inside, 1.0 + rng.random((t_pd + 1,) + dims), 0.0)
    sample = TrainingSample(VolumeSeries(g, 1.0, frames))
    cfg = LossConfig(lambda_v=lambdas[0], lambda_d=lambdas[1],
                     solver=SolverConfig(dt=dt, mode=mode, integrator=integrator))
    return g, mask, sample, cfg, theta, rng


def _params(g, theta):
    from pdeflow.fields import DiffusivityParamIso

    return (Potentials(ScalarField(g, theta[0]), ScalarField(g, theta[1])),
            DiffusivityParamIso(ScalarField(g, theta[2])))


def _crosses_upwind_switch(g, mask, theta, direction, eps):
    """True when some active velocity component changes sign within ``theta +- eps * direction``."""
    from pdeflow.fields import cross_gradients

    act = mask.active
    vs = [cross_gradients(theta[0] + s * eps * direction[0], theta[1] + s * eps * direction[1], g.spacing)
          for s in (-1.0, 0.0, 1.0)]
    signs = [np.sign(v[:, act]) for v in vs]
    return bool(np.any(signs[0] != signs[1]) or np.any(signs[1] != signs[2]))


def gradient_check(seed: int, n_directions: int = 10, eps: float = 1e-5, min_cos: float = 1e-3, **kw):
    """Max relative error of adjoint directional derivatives against central differences.

    Directions have i.i.d. N(0, 1) entries inside the mask.  Two kinds of
    direction are redrawn because the finite-difference oracle itself is
    invalid there:

    * the +-eps probe flips the sign of an active velocity component, so it
      straddles a kink of the upwind scheme where no derivative exists;
    * the direction is nearly orthogonal to the gradient (``|cos| < min_cos``),
      so the O(eps^2) truncation error of the oracle dominates the tiny
      derivative it is compared against.

    Returns ``(max_rel_err, kink_redraws, orthogonal_redraws)``.
    """
    from pdeflow.loss import loss_gradients, total_loss

    g, mask, sample, cfg, theta, rng = random_instance(seed, **kw)
    br, grads, alphas = loss_gradients(sample, _params(g, theta), cfg, mask, return_alphas=True)
    gvec = [grads.d_gamma1.values, grads.d_gamma2.values, grads.d_l.values]
    gnorm = np.sqrt(sum(float(np.sum(a * a)) for a in gvec))
    worst, kinks, orth = 0.0, 0, 0
    done = 0
    while done < n_directions:
        if kinks + orth > 50 * n_directions:
            raise RuntimeError("could not find admissible directions")
        direction = [np.where(mask.inside, rng.standard_normal(g.dims), 0.0) for _ in range(3)]
        if cfg.mode.advects and _crosses_upwind_switch(g, mask, theta, direction, eps):
            kinks += 1
            continue
        ad = sum(float(np.sum(a * d)) for a, d in zip(gvec, direction))
        dnorm = np.sqrt(sum(float(np.sum(d * d)) for d in direction))
        if abs(ad) < min_cos * gnorm * dnorm:
            orth += 1
            continue
        plus = total_loss(sample, _params(g, [t + eps * d for t, d in zip(theta, direction)]), cfg, mask, alphas)
        minus = total_loss(sample, _params(g, [t - eps * d for t, d in zip(theta, direction)]), cfg, mask, alphas)
        fd = (plus.total - minus.total) / (2 * eps)
        worst = max(worst, abs(ad - fd) / abs(fd))
        done += 1
    return worst, kinks, orth
