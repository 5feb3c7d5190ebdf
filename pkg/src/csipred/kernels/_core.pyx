# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled time-stepping kernels for the recurrent encoders.

Semantics match kernels._ref exactly. Row-major matrix products are routed
through Fortran BLAS with the usual transpose trick; gate math runs in plain
C loops. Projection buffers passed in are clobbered (used as accumulators).
"""

import numpy as np

from cython cimport floating
from libc.math cimport exp, expf, tanh, tanhf
from scipy.linalg.cython_blas cimport dgemm, sgemm


cdef inline floating _sig(floating x) noexcept nogil:
    if floating is float:
        return <float>1.0 / (<float>1.0 + expf(-x))
    else:
        return 1.0 / (1.0 + exp(-x))


cdef inline floating _tanh(floating x) noexcept nogil:
    if floating is float:
        return tanhf(x)
    else:
        return tanh(x)


cdef inline void _gemm(bint trans_u, int d, int b, floating alpha,
                       floating *u, floating *x, int ldx,
                       floating beta, floating *out, int ldout) noexcept nogil:
    # Row-major OUT[b,d] = alpha * X[b,d] @ op(U)[d,d] + beta * OUT.
    # In Fortran terms: OUT^T = op(U)^T X^T, so U goes in as the A operand.
    cdef char ta = 84 if trans_u else 78  # 'T' / 'N'
    cdef char tb = 78
    cdef int m = d, n = b, k = d, lda = d
    if floating is float:
        sgemm(&ta, &tb, &m, &n, &k, &alpha, u, &lda, x, &ldx, &beta, out, &ldout)
    else:
        dgemm(&ta, &tb, &m, &n, &k, &alpha, u, &lda, x, &ldx, &beta, out, &ldout)


def gru_seq_forward(floating[:, :, ::1] pz, floating[:, :, ::1] pr,
                    floating[:, :, ::1] ph,
                    floating[:, ::1] uz, floating[:, ::1] ur,
                    floating[:, ::1] uh):
    cdef int B = pz.shape[0], T = pz.shape[1], d = pz.shape[2]
    cdef int ld = T * d
    dtype = np.float32 if floating is float else np.float64
    h_arr = np.empty((B, T, d), dtype=dtype)
    z_arr = np.empty((B, T, d), dtype=dtype)
    r_arr = np.empty((B, T, d), dtype=dtype)
    hc_arr = np.empty((B, T, d), dtype=dtype)
    rh_arr = np.empty((B, d), dtype=dtype)
    cdef floating[:, :, ::1] h = h_arr, z = z_arr, r = r_arr, hc = hc_arr
    cdef floating[:, ::1] rh = rh_arr
    cdef int t, b, j
    cdef floating hp, zv, rv, hv

    with nogil:
        for t in range(T):
            if t > 0:
                _gemm(False, d, B, <floating>1.0, &uz[0, 0], &h[0, t - 1, 0], ld,
                      <floating>1.0, &pz[0, t, 0], ld)
                _gemm(False, d, B, <floating>1.0, &ur[0, 0], &h[0, t - 1, 0], ld,
                      <floating>1.0, &pr[0, t, 0], ld)
            for b in range(B):
                for j in range(d):
                    hp = h[b, t - 1, j] if t > 0 else <floating>0.0
                    zv = _sig(pz[b, t, j])
                    rv = _sig(pr[b, t, j])
                    z[b, t, j] = zv
                    r[b, t, j] = rv
                    rh[b, j] = rv * hp
            _gemm(False, d, B, <floating>1.0, &uh[0, 0], &rh[0, 0], d,
                  <floating>1.0, &ph[0, t, 0], ld)
            for b in range(B):
                for j in range(d):
                    hp = h[b, t - 1, j] if t > 0 else <floating>0.0
                    hv = _tanh(ph[b, t, j])
                    hc[b, t, j] = hv
                    h[b, t, j] = (<floating>1.0 - z[b, t, j]) * hp + z[b, t, j] * hv
    return h_arr, z_arr, r_arr, hc_arr


def gru_seq_backward(floating[:, :, ::1] dh_seq,
                     floating[:, ::1] uz, floating[:, ::1] ur,
                     floating[:, ::1] uh,
                     floating[:, :, ::1] h, floating[:, :, ::1] z,
                     floating[:, :, ::1] r, floating[:, :, ::1] hc):
    cdef int B = h.shape[0], T = h.shape[1], d = h.shape[2]
    cdef int ld = T * d
    dtype = np.float32 if floating is float else np.float64
    dpz_arr = np.empty((B, T, d), dtype=dtype)
    dpr_arr = np.empty((B, T, d), dtype=dtype)
    dph_arr = np.empty((B, T, d), dtype=dtype)
    dht_arr = np.empty((B, d), dtype=dtype)
    q_arr = np.empty((B, d), dtype=dtype)
    run_arr = np.zeros((B, d), dtype=dtype)
    cdef floating[:, :, ::1] dpz = dpz_arr, dpr = dpr_arr, dph = dph_arr
    cdef floating[:, ::1] dht = dht_arr, q = q_arr, run = run_arr
    cdef int t, b, j
    cdef floating hp, zv, rv, hv, dh, dz, dah, daz, dr

    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for j in range(d):
                    dh = run[b, j] + dh_seq[b, t, j]
                    dht[b, j] = dh
                    hp = h[b, t - 1, j] if t > 0 else <floating>0.0
                    zv = z[b, t, j]
                    hv = hc[b, t, j]
                    dz = dh * (hv - hp)
                    dah = dh * zv * (<floating>1.0 - hv * hv)
                    daz = dz * zv * (<floating>1.0 - zv)
                    dph[b, t, j] = dah
                    dpz[b, t, j] = daz
                    run[b, j] = dh * (<floating>1.0 - zv)
            _gemm(True, d, B, <floating>1.0, &uh[0, 0], &dph[0, t, 0], ld,
                  <floating>0.0, &q[0, 0], d)
            for b in range(B):
                for j in range(d):
                    hp = h[b, t - 1, j] if t > 0 else <floating>0.0
                    rv = r[b, t, j]
                    dr = q[b, j] * hp
                    dpr[b, t, j] = dr * rv * (<floating>1.0 - rv)
                    run[b, j] = run[b, j] + q[b, j] * rv
            _gemm(True, d, B, <floating>1.0, &uz[0, 0], &dpz[0, t, 0], ld,
                  <floating>1.0, &run[0, 0], d)
            _gemm(True, d, B, <floating>1.0, &ur[0, 0], &dpr[0, t, 0], ld,
                  <floating>1.0, &run[0, 0], d)
    return dpz_arr, dpr_arr, dph_arr


def lstm_seq_forward(floating[:, :, ::1] pi, floating[:, :, ::1] pf,
                     floating[:, :, ::1] pg, floating[:, :, ::1] po,
                     floating[:, ::1] ui, floating[:, ::1] uf,
                     floating[:, ::1] ug, floating[:, ::1] uo):
    cdef int B = pi.shape[0], T = pi.shape[1], d = pi.shape[2]
    cdef int ld = T * d
    dtype = np.float32 if floating is float else np.float64
    h_arr = np.empty((B, T, d), dtype=dtype)
    i_arr = np.empty((B, T, d), dtype=dtype)
    f_arr = np.empty((B, T, d), dtype=dtype)
    g_arr = np.empty((B, T, d), dtype=dtype)
    o_arr = np.empty((B, T, d), dtype=dtype)
    c_arr = np.empty((B, T, d), dtype=dtype)
    cdef floating[:, :, ::1] h = h_arr, iv = i_arr, fv = f_arr
    cdef floating[:, :, ::1] gv = g_arr, ov = o_arr, cv = c_arr
    cdef int t, b, j
    cdef floating cp, ii, ff, gg, oo, cc

    with nogil:
        for t in range(T):
            if t > 0:
                _gemm(False, d, B, <floating>1.0, &ui[0, 0], &h[0, t - 1, 0], ld,
                      <floating>1.0, &pi[0, t, 0], ld)
                _gemm(False, d, B, <floating>1.0, &uf[0, 0], &h[0, t - 1, 0], ld,
                      <floating>1.0, &pf[0, t, 0], ld)
                _gemm(False, d, B, <floating>1.0, &ug[0, 0], &h[0, t - 1, 0], ld,
                      <floating>1.0, &pg[0, t, 0], ld)
                _gemm(False, d, B, <floating>1.0, &uo[0, 0], &h[0, t - 1, 0], ld,
                      <floating>1.0, &po[0, t, 0], ld)
            for b in range(B):
                for j in range(d):
                    cp = cv[b, t - 1, j] if t > 0 else <floating>0.0
                    ii = _sig(pi[b, t, j])
                    ff = _sig(pf[b, t, j])
                    gg = _tanh(pg[b, t, j])
                    oo = _sig(po[b, t, j])
                    cc = ff * cp + ii * gg
                    iv[b, t, j] = ii
                    fv[b, t, j] = ff
                    gv[b, t, j] = gg
                    ov[b, t, j] = oo
                    cv[b, t, j] = cc
                    h[b, t, j] = oo * _tanh(cc)
    return h_arr, i_arr, f_arr, g_arr, o_arr, c_arr


def lstm_seq_backward(floating[:, :, ::1] dh_seq,
                      floating[:, ::1] ui, floating[:, ::1] uf,
                      floating[:, ::1] ug, floating[:, ::1] uo,
                      floating[:, :, ::1] iv, floating[:, :, ::1] fv,
                      floating[:, :, ::1] gv, floating[:, :, ::1] ov,
                      floating[:, :, ::1] cv):
    cdef int B = iv.shape[0], T = iv.shape[1], d = iv.shape[2]
    cdef int ld = T * d
    dtype = np.float32 if floating is float else np.float64
    dpi_arr = np.empty((B, T, d), dtype=dtype)
    dpf_arr = np.empty((B, T, d), dtype=dtype)
    dpg_arr = np.empty((B, T, d), dtype=dtype)
    dpo_arr = np.empty((B, T, d), dtype=dtype)
    run_arr = np.zeros((B, d), dtype=dtype)
    dcrun_arr = np.zeros((B, d), dtype=dtype)
    cdef floating[:, :, ::1] dpi = dpi_arr, dpf = dpf_arr, dpg = dpg_arr, dpo = dpo_arr
    cdef floating[:, ::1] run = run_arr, dcrun = dcrun_arr
    cdef int t, b, j
    cdef floating cp, ii, ff, gg, oo, tc, dh, do_, dc

    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for j in range(d):
                    dh = run[b, j] + dh_seq[b, t, j]
                    cp = cv[b, t - 1, j] if t > 0 else <floating>0.0
                    ii = iv[b, t, j]
                    ff = fv[b, t, j]
                    gg = gv[b, t, j]
                    oo = ov[b, t, j]
                    tc = _tanh(cv[b, t, j])
                    do_ = dh * tc
                    dc = dcrun[b, j] + dh * oo * (<floating>1.0 - tc * tc)
                    dpi[b, t, j] = dc * gg * ii * (<floating>1.0 - ii)
                    dpf[b, t, j] = dc * cp * ff * (<floating>1.0 - ff)
                    dpg[b, t, j] = dc * ii * (<floating>1.0 - gg * gg)
                    dpo[b, t, j] = do_ * oo * (<floating>1.0 - oo)
                    dcrun[b, j] = dc * ff
            _gemm(True, d, B, <floating>1.0, &ui[0, 0], &dpi[0, t, 0], ld,
                  <floating>0.0, &run[0, 0], d)
            _gemm(True, d, B, <floating>1.0, &uf[0, 0], &dpf[0, t, 0], ld,
                  <floating>1.0, &run[0, 0], d)
            _gemm(True, d, B, <floating>1.0, &ug[0, 0], &dpg[0, t, 0], ld,
                  <floating>1.0, &run[0, 0], d)
            _gemm(True, d, B, <floating>1.0, &uo[0, 0], &dpo[0, t, 0], ld,
                  <floating>1.0, &run[0, 0], d)
    return dpi_arr, dpf_arr, dpg_arr, dpo_arr
