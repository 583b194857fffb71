"""Shared test oracles."""

import numpy as np

from ctqec import sde

GBM_MU, GBM_SIGMA, GBM_T = 1.5, 0.5, 1.0


def random_state(d, rng):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def gbm_weak_error(n_steps, scheme, paths=10_000, seed=7):
    """Mean of (numerical - exact) at time T for dX = mu X dt + sigma X dW.

    The exact solution on the same Brownian path serves as a control variate,
    so the estimate has small variance and the same expectation as the weak
    error.  Returns (mean error, standard error).
    """
    h = GBM_T / n_steps
    rng = np.random.default_rng(seed)
    dw = rng.normal(0.0, np.sqrt(h), size=(n_steps, paths))
    x = np.ones(paths)
    for k in range(n_steps):
        x = sde.step(x, lambda v: GBM_MU * v, None, dw[k], h, scheme,
                     noise_term=lambda v, inc: GBM_SIGMA * v * inc)
    exact = np.exp((GBM_MU - GBM_SIGMA ** 2 / 2) * GBM_T + GBM_SIGMA * dw.sum(axis=0))
    diff = x - exact
    return diff.mean(), diff.std(ddof=1) / np.sqrt(paths)


def ratio_bounds(a, b):
    """Range of a/b allowed by 3 standard errors on each."""
    (ma, sa), (mb, sb) = a, b
    return (abs(ma) - 3 * sa) / (abs(mb) + 3 * sb), (abs(ma) + 3 * sa) / (abs(mb) - 3 * sb)
