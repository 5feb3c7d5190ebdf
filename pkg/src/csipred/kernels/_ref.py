"""Numpy implementation of the sequential recurrence kernels.

These functions mirror the compiled extension exactly: they consume
precomputed input projections (already including the input-to-hidden matmul
and bias) and run the time-stepping loop, which is the part that cannot be
batched across steps. The projection buffers may be clobbered.
"""

import numpy as np


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_seq_forward(pz, pr, ph, uz, ur, uh):
    """Run the gated-recurrent update over time.

    pz, pr, ph: [B, T, d] input projections for the update gate, reset gate
    and candidate state. uz, ur, uh: [d, d] recurrent weights. Returns the
    hidden sequence plus per-step gate/candidate caches for backward.
    """
    B, T, d = pz.shape
    h = np.empty_like(pz)
    z = np.empty_like(pz)
    r = np.empty_like(pz)
    hc = np.empty_like(pz)
    hprev = np.zeros((B, d), dtype=pz.dtype)
    for t in range(T):
        zt = _sigmoid(pz[:, t] + hprev @ uz)
        rt = _sigmoid(pr[:, t] + hprev @ ur)
        hct = np.tanh(ph[:, t] + (rt * hprev) @ uh)
        hprev = (1.0 - zt) * hprev + zt * hct
        z[:, t] = zt
        r[:, t] = rt
        hc[:, t] = hct
        h[:, t] = hprev
    return h, z, r, hc


def gru_seq_backward(dh_seq, uz, ur, uh, h, z, r, hc):
    """Reverse-time sweep; returns pre-activation gradients [B, T, d] for the
    three projections. Weight/bias/input gradients are batched by the caller."""
    B, T, d = h.shape
    dpz = np.empty_like(h)
    dpr = np.empty_like(h)
    dph = np.empty_like(h)
    uzT, urT, uhT = uz.T, ur.T, uh.T
    dh_run = np.zeros((B, d), dtype=h.dtype)
    for t in range(T - 1, -1, -1):
        dh = dh_run + dh_seq[:, t]
        hp = h[:, t - 1] if t > 0 else np.zeros((B, d), dtype=h.dtype)
        zt, rt, hct = z[:, t], r[:, t], hc[:, t]
        dz = dh * (hct - hp)
        dah = dh * zt * (1.0 - hct * hct)
        daz = dz * zt * (1.0 - zt)
        dph[:, t] = dah
        dpz[:, t] = daz
        dq = dah @ uhT                      # gradient w.r.t. (r * h_prev)
        dar = dq * hp * rt * (1.0 - rt)
        dpr[:, t] = dar
        dh_run = dh * (1.0 - zt) + dq * rt + daz @ uzT + dar @ urT
    return dpz, dpr, dph


def lstm_seq_forward(pi, pf, pg, po, ui, uf, ug, uo):
    """Standard 4-gate LSTM recurrence; same calling convention as the GRU."""
    B, T, d = pi.shape
    h = np.empty_like(pi)
    i = np.empty_like(pi)
    f = np.empty_like(pi)
    g = np.empty_like(pi)
    o = np.empty_like(pi)
    c = np.empty_like(pi)
    hprev = np.zeros((B, d), dtype=pi.dtype)
    cprev = np.zeros((B, d), dtype=pi.dtype)
    for t in range(T):
        it = _sigmoid(pi[:, t] + hprev @ ui)
        ft = _sigmoid(pf[:, t] + hprev @ uf)
        gt = np.tanh(pg[:, t] + hprev @ ug)
        ot = _sigmoid(po[:, t] + hprev @ uo)
        cprev = ft * cprev + it * gt
        hprev = ot * np.tanh(cprev)
        i[:, t] = it
        f[:, t] = ft
        g[:, t] = gt
        o[:, t] = ot
        c[:, t] = cprev
        h[:, t] = hprev
    return h, i, f, g, o, c


def lstm_seq_backward(dh_seq, ui, uf, ug, uo, i, f, g, o, c):
    B, T, d = i.shape
    dpi = np.empty_like(i)
    dpf = np.empty_like(i)
    dpg = np.empty_like(i)
    dpo = np.empty_like(i)
    uiT, ufT, ugT, uoT = ui.T, uf.T, ug.T, uo.T
    dh_run = np.zeros((B, d), dtype=i.dtype)
    dc_run = np.zeros((B, d), dtype=i.dtype)
    for t in range(T - 1, -1, -1):
        dh = dh_run + dh_seq[:, t]
        cp = c[:, t - 1] if t > 0 else np.zeros((B, d), dtype=i.dtype)
        it, ft, gt, ot = i[:, t], f[:, t], g[:, t], o[:, t]
        tc = np.tanh(c[:, t])
        do = dh * tc
        dc = dc_run + dh * ot * (1.0 - tc * tc)
        dai = dc * gt * it * (1.0 - it)
        daf = dc * cp * ft * (1.0 - ft)
        dag = dc * it * (1.0 - gt * gt)
        dao = do * ot * (1.0 - ot)
        dpi[:, t] = dai
        dpf[:, t] = daf
        dpg[:, t] = dag
        dpo[:, t] = dao
        dc_run = dc * ft
        dh_run = dai @ uiT + daf @ ufT + dag @ ugT + dao @ uoT
    return dpi, dpf, dpg, dpo
