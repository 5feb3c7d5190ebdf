"""Recurrent-layer kernels with a compiled core and a pure-numpy fallback.

The time-stepping loop inside the GRU/LSTM encoders is the only part of the
model that cannot be expressed as a handful of large matrix products; it
dominates wall-clock time. It is implemented twice with identical semantics:

* ``_core`` - Cython extension (elementwise gate math in C loops, recurrent
  matmuls via BLAS), built by setup.py;
* ``_ref``  - plain numpy, always available.

At import the compiled core is selected when present; setting the environment
variable ``CSIPRED_PURE_PY=1`` forces the fallback. ``use_backend`` switches
at runtime (used by the backend-comparison benchmark and by tests).

Layer-level entry points below wrap the sequential kernels with the batched
algebra that is shared by both backends: input projections on the way in,
weight/input gradient contractions on the way out.
"""

import os

import numpy as np

from . import _ref

_BACKENDS = {"python": _ref}
try:
    from . import _core  # compiled extension; absent in pure-python installs
    _BACKENDS["cython"] = _core
except ImportError:
    _core = None

if os.environ.get("CSIPRED_PURE_PY"):
    _active_name = "python"
else:
    _active_name = "cython" if _core is not None else "python"


def backend() -> str:
    """Name of the kernel backend currently in use."""
    return _active_name


def available_backends() -> tuple:
    return tuple(sorted(_BACKENDS))


def use_backend(name: str) -> str:
    """Select the kernel backend; returns the previously active name."""
    global _active_name
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {sorted(_BACKENDS)}")
    prev = _active_name
    _active_name = name
    return prev


def _impl():
    return _BACKENDS[_active_name]


def _c(a):
    return np.ascontiguousarray(a)


# -- GRU layer -------------------------------------------------------------


def gru_layer_forward(x, wz, uz, bz, wr, ur, br, wh, uh, bh):
    """Full-sequence GRU layer. x: [B, T, Din]; returns (h [B, T, d], cache)."""
    pz = _c(x @ wz + bz)
    pr = _c(x @ wr + br)
    ph = _c(x @ wh + bh)
    h, z, r, hc = _impl().gru_seq_forward(pz, pr, ph, _c(uz), _c(ur), _c(uh))
    return h, (z, r, hc)


def gru_layer_backward(dh, x, wz, uz, wr, ur, wh, uh, h, cache):
    """Gradients for every input of gru_layer_forward given dL/dh [B, T, d]."""
    z, r, hc = cache
    dpz, dpr, dph = _impl().gru_seq_backward(_c(dh), _c(uz), _c(ur), _c(uh), h, z, r, hc)
    B, T, d = h.shape
    din = x.shape[-1]
    x2 = x.reshape(B * T, din)
    hprev = np.concatenate([np.zeros((B, 1, d), dtype=h.dtype), h[:, :-1]], axis=1)
    hprev2 = hprev.reshape(B * T, d)
    dpz2 = dpz.reshape(B * T, d)
    dpr2 = dpr.reshape(B * T, d)
    dph2 = dph.reshape(B * T, d)
    rh2 = (r.reshape(B * T, d) * hprev2)

    dwz = x2.T @ dpz2
    dwr = x2.T @ dpr2
    dwh = x2.T @ dph2
    duz = hprev2.T @ dpz2
    dur = hprev2.T @ dpr2
    duh = rh2.T @ dph2
    dbz = dpz2.sum(axis=0)
    dbr = dpr2.sum(axis=0)
    dbh = dph2.sum(axis=0)
    dx = (dpz2 @ wz.T + dpr2 @ wr.T + dph2 @ wh.T).reshape(B, T, din)
    return dx, dwz, duz, dbz, dwr, dur, dbr, dwh, duh, dbh


# -- LSTM layer ------------------------------------------------------------


def lstm_layer_forward(x, wi, ui, bi, wf, uf, bf, wg, ug, bg, wo, uo, bo):
    """Full-sequence LSTM layer with zero initial state."""
    pi = _c(x @ wi + bi)
    pf = _c(x @ wf + bf)
    pg = _c(x @ wg + bg)
    po = _c(x @ wo + bo)
    h, i, f, g, o, c = _impl().lstm_seq_forward(pi, pf, pg, po, _c(ui), _c(uf), _c(ug), _c(uo))
    return h, (i, f, g, o, c)


def lstm_layer_backward(dh, x, wi, ui, wf, uf, wg, ug, wo, uo, cache):
    i, f, g, o, c = cache
    dpi, dpf, dpg, dpo = _impl().lstm_seq_backward(
        _c(dh), _c(ui), _c(uf), _c(ug), _c(uo), i, f, g, o, c)
    B, T, d = i.shape
    din = x.shape[-1]
    x2 = x.reshape(B * T, din)
    h = o * np.tanh(c)
    hprev = np.concatenate([np.zeros((B, 1, d), dtype=c.dtype), h[:, :-1]], axis=1)
    hprev2 = hprev.reshape(B * T, d)

    grads = []
    dx2 = np.zeros((B * T, din), dtype=c.dtype)
    for dp, w in ((dpi, wi), (dpf, wf), (dpg, wg), (dpo, wo)):
        dp2 = dp.reshape(B * T, d)
        grads.append((x2.T @ dp2, hprev2.T @ dp2, dp2.sum(axis=0)))
        dx2 += dp2 @ w.T
    dx = dx2.reshape(B, T, din)
    (dwi, dui, dbi), (dwf, duf, dbf), (dwg, dug, dbg), (dwo, duo, dbo) = grads
    return dx, dwi, dui, dbi, dwf, duf, dbf, dwg, dug, dbg, dwo, duo, dbo
