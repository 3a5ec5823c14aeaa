"""Shared test oracles, independent of the library's differentiation path."""

import numpy as np


def numerical_grad(f, x, h=1e-5):
    """Central finite differences of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
        it.iternext()
    return g


def assert_grad_close(analytic, numeric, rtol=1e-6, atol=1e-8):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    assert analytic.shape == numeric.shape
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


def assert_grad_close_piecewise(f, analytic, x, h=1e-5, rtol=1e-6, atol=1e-7, max_kinks=0.02):
    """FD check for piecewise-smooth losses (relu / abs / max-pool kinks).

    Central differences are invalid at coordinates whose perturbation crosses
    a kink; those are detected by secant disagreement across two step sizes
    and excluded, capped at `max_kinks` of all coordinates.
    """
    analytic = np.asarray(analytic).ravel()
    fd_a = numerical_grad(f, x, h=h).ravel()
    fd_b = numerical_grad(f, x, h=h / 8.0).ravel()
    smooth = np.abs(fd_a - fd_b) <= 1e-5 * (1.0 + np.abs(fd_a))
    frac_kinked = 1.0 - np.mean(smooth)
    assert frac_kinked <= max_kinks, f"too many kink-contaminated coords: {frac_kinked:.3%}"
    np.testing.assert_allclose(analytic[smooth], fd_a[smooth], rtol=rtol, atol=atol)


def eager_mlp_logits(x, weights, biases):
    """Straight-line two-or-more-layer MLP forward in plain numpy."""
    a = x
    for w, b in zip(weights[:-1], biases[:-1]):
        a = np.maximum(a @ w + b, 0.0)
    return a @ weights[-1] + biases[-1]


def eager_softmax_cross_entropy(logits, labels):
    """Mean cross-entropy computed directly (log-sum-exp form)."""
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    picked = logits[np.arange(logits.shape[0]), labels]
    return float(np.mean(lse - picked))
