# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; semantics must match dualproto._kernels_py exactly."""

from libc.math cimport exp, log

import numpy as np

DEF LOG_FLOOR = 1e-300


def proto_probs(double[:, ::1] feats, double[:, ::1] tproto,
                double[:, ::1] vproto, unsigned char[::1] has,
                double alpha, double beta, double inv_temp):
    cdef Py_ssize_t n_rows = feats.shape[0]
    cdef Py_ssize_t d = feats.shape[1]
    cdef Py_ssize_t n_cls = tproto.shape[0]
    out_arr = np.empty((n_rows, n_cls), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n, c, j
    cdef double st, sv, z, zmax, total
    for n in range(n_rows):
        zmax = -1e308
        for c in range(n_cls):
            st = 0.0
            sv = 0.0
            for j in range(d):
                st += feats[n, j] * tproto[c, j]
                sv += feats[n, j] * vproto[c, j]
            z = st
            if has[c]:
                z += alpha * exp(-beta * (1.0 - sv))
            z *= inv_temp
            out[n, c] = z
            if z > zmax:
                zmax = z
        total = 0.0
        for c in range(n_cls):
            out[n, c] = exp(out[n, c] - zmax)
            total += out[n, c]
        for c in range(n_cls):
            out[n, c] /= total
    return out_arr


def entropy_mean_grad(double[:, ::1] feats, double[:, ::1] tproto,
                      double[:, ::1] vproto, unsigned char[::1] has,
                      double alpha, double beta, double inv_temp):
    cdef Py_ssize_t k = feats.shape[0]
    cdef Py_ssize_t d = feats.shape[1]
    cdef Py_ssize_t n_cls = tproto.shape[0]
    probs_arr = np.empty((k, n_cls), dtype=np.float64)
    aff_arr = np.empty((k, n_cls), dtype=np.float64)
    gt_arr = np.zeros((n_cls, d), dtype=np.float64)
    gv_arr = np.zeros((n_cls, d), dtype=np.float64)
    cdef double[:, ::1] probs = probs_arr
    cdef double[:, ::1] aff = aff_arr
    cdef double[:, ::1] gt = gt_arr
    cdef double[:, ::1] gv = gv_arr
    cdef Py_ssize_t n, c, j
    cdef double st, sv, z, zmax, total, loss, pc, rowdot, gzc, gvc

    for n in range(k):
        zmax = -1e308
        for c in range(n_cls):
            st = 0.0
            sv = 0.0
            for j in range(d):
                st += feats[n, j] * tproto[c, j]
                sv += feats[n, j] * vproto[c, j]
            if has[c]:
                aff[n, c] = alpha * exp(-beta * (1.0 - sv))
            else:
                aff[n, c] = 0.0
            z = (st + aff[n, c]) * inv_temp
            probs[n, c] = z
            if z > zmax:
                zmax = z
        total = 0.0
        for c in range(n_cls):
            probs[n, c] = exp(probs[n, c] - zmax)
            total += probs[n, c]
        for c in range(n_cls):
            probs[n, c] /= total

    pbar_arr = np.empty(n_cls, dtype=np.float64)
    gpbar_arr = np.empty(n_cls, dtype=np.float64)
    cdef double[::1] pbar = pbar_arr
    cdef double[::1] gpbar = gpbar_arr
    loss = 0.0
    for c in range(n_cls):
        pc = 0.0
        for n in range(k):
            pc += probs[n, c]
        pc /= k
        pbar[c] = pc
        if pc > 0.0:
            loss -= pc * log(pc)
            gpbar[c] = -(log(pc) + 1.0) / k
        else:
            gpbar[c] = -(log(LOG_FLOOR) + 1.0) / k

    for n in range(k):
        rowdot = 0.0
        for c in range(n_cls):
            rowdot += gpbar[c] * probs[n, c]
        for c in range(n_cls):
            gzc = probs[n, c] * (gpbar[c] - rowdot) * inv_temp
            gvc = gzc * beta * aff[n, c]
            for j in range(d):
                gt[c, j] += gzc * feats[n, j]
                gv[c, j] += gvc * feats[n, j]
    return loss, gt_arr, gv_arr


def align_loss_grad(double[:, ::1] tproto, double[:, ::1] vproto,
                    double inv_temp):
    cdef Py_ssize_t n_cls = tproto.shape[0]
    cdef Py_ssize_t d = tproto.shape[1]
    sim_arr = np.empty((n_cls, n_cls), dtype=np.float64)
    gt_arr = np.zeros((n_cls, d), dtype=np.float64)
    gv_arr = np.zeros((n_cls, d), dtype=np.float64)
    cdef double[:, ::1] sim = sim_arr
    cdef double[:, ::1] gt = gt_arr
    cdef double[:, ::1] gv = gv_arr
    cdef Py_ssize_t a, b, j
    cdef double s, m, total, loss, dgab

    for a in range(n_cls):
        for b in range(n_cls):
            s = 0.0
            for j in range(d):
                s += tproto[a, j] * vproto[b, j]
            sim[a, b] = s * inv_temp

    row_sm_arr = np.empty((n_cls, n_cls), dtype=np.float64)
    col_sm_arr = np.empty((n_cls, n_cls), dtype=np.float64)
    cdef double[:, ::1] row_sm = row_sm_arr
    cdef double[:, ::1] col_sm = col_sm_arr
    loss = 0.0

    for a in range(n_cls):
        m = -1e308
        for b in range(n_cls):
            if sim[a, b] > m:
                m = sim[a, b]
        total = 0.0
        for b in range(n_cls):
            row_sm[a, b] = exp(sim[a, b] - m)
            total += row_sm[a, b]
        loss += m + log(total) - sim[a, a]
        for b in range(n_cls):
            row_sm[a, b] /= total

    for b in range(n_cls):
        m = -1e308
        for a in range(n_cls):
            if sim[a, b] > m:
                m = sim[a, b]
        total = 0.0
        for a in range(n_cls):
            col_sm[a, b] = exp(sim[a, b] - m)
            total += col_sm[a, b]
        loss += m + log(total) - sim[b, b]
        for a in range(n_cls):
            col_sm[a, b] /= total

    loss /= n_cls
    for a in range(n_cls):
        for b in range(n_cls):
            dgab = row_sm[a, b] + col_sm[a, b]
            if a == b:
                dgab -= 2.0
            dgab *= inv_temp / n_cls
            for j in range(d):
                gt[a, j] += dgab * vproto[b, j]
                gv[b, j] += dgab * tproto[a, j]
    return loss, gt_arr, gv_arr
