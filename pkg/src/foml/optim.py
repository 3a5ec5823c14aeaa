"""First-order optimizers, usable live (numpy) and inside a recorded unroll.

Both code paths execute the same arithmetic in the same order, so a replayed
taped update reproduces a live update exactly. The taped path is what lets a
meta-gradient differentiate through optimizer steps.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


class Sgd:
    """Plain gradient descent."""

    name = "sgd"

    def __init__(self, lr):
        self.lr = float(lr)

    def init_state(self, params):
        return {"kind": self.name}

    def step_arrays(self, params, grads, state):
        new = {k: params[k] - self.lr * grads[k] for k in params}
        return new, state

    def step_tensors(self, params, grads, state):
        new = {k: ad.sub(params[k], ad.scale(grads[k], self.lr)) for k in params}
        return new, state


class Adam:
    """Adam with bias correction.

    The denominator is sqrt(v_hat + eps^2) rather than sqrt(v_hat) + eps: the
    two agree to first order in eps, but only the former has a bounded
    derivative at v_hat = 0, which matters when meta-gradients flow through
    the update (zero-gradient coordinates would otherwise produce inf * 0).
    """

    name = "adam"

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.eps_sq = float(eps) ** 2

    def init_state(self, params):
        zeros = {k: np.zeros_like(v) for k, v in params.items()}
        return {
            "kind": self.name,
            "t": 0,
            "m": zeros,
            "v": {k: z.copy() for k, z in zeros.items()},
        }

    def step_arrays(self, params, grads, state):
        t = state["t"] + 1
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        m, v, new = {}, {}, {}
        for k in params:
            g = grads[k]
            m[k] = self.beta1 * state["m"][k] + (1.0 - self.beta1) * g
            v[k] = self.beta2 * state["v"][k] + (1.0 - self.beta2) * (g * g)
            mhat = m[k] / c1
            vhat = v[k] / c2
            new[k] = params[k] - self.lr * (mhat / np.sqrt(vhat + self.eps_sq))
        return new, {"kind": self.name, "t": t, "m": m, "v": v}

    def step_tensors(self, params, grads, state):
        t = state["t"] + 1
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        m, v, new = {}, {}, {}
        for k in params:
            g = grads[k]
            m[k] = ad.add(ad.scale(state["m"][k], self.beta1), ad.scale(g, 1.0 - self.beta1))
            v[k] = ad.add(ad.scale(state["v"][k], self.beta2), ad.scale(ad.mul(g, g), 1.0 - self.beta2))
            mhat = ad.scale(m[k], 1.0 / c1)
            vhat = ad.scale(v[k], 1.0 / c2)
            denom = ad.sqrt(ad.add(vhat, ad._const_like(self.eps_sq, vhat)))
            new[k] = ad.sub(params[k], ad.scale(ad.div(mhat, denom), self.lr))
        return new, {"kind": self.name, "t": t, "m": m, "v": v}

    def state_tensors(self, state):
        """Wrap a live state as tape constants for a recorded unroll."""
        return {
            "kind": self.name,
            "t": state["t"],
            "m": {k: ad.constant(a) for k, a in state["m"].items()},
            "v": {k: ad.constant(a) for k, a in state["v"].items()},
        }


def make_optimizer(kind, lr):
    if kind == "sgd":
        return Sgd(lr)
    if kind == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer kind {kind!r}")


def copy_state(state):
    """Deep copy an optimizer state for trajectory snapshots."""
    out = {}
    for k, v in state.items():
        if isinstance(v, dict):
            out[k] = {kk: vv.copy() if isinstance(vv, np.ndarray) else vv for kk, vv in v.items()}
        else:
            out[k] = v
    return out


def state_tensors(optimizer, state):
    """Tape-constant view of a state (identity for stateless optimizers)."""
    if isinstance(optimizer, Adam):
        return optimizer.state_tensors(state)
    return state
