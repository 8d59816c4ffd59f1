# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, log, log1p, expm1, cbrt, fabs, fma

cnp.import_array()

BACKEND = "cython"

cdef double _SERIES_P_MAX = 1e-3
cdef int _MAX_HALLEY = 64
cdef int _MAX_NEWTON = 64
cdef double _E_HI = 2.718281828459045
cdef double _E_LO = 1.4456468917292502e-16
cdef double _LOG_SERIES_U = 0.25
cdef int _LOG_SERIES_TERMS = 26


cdef inline double _branch_series(double p) nogil:
    return p * (1.0 + p * (-1.0 / 3.0 + p * (11.0 / 72.0 + p * (-43.0 / 540.0
                + p * (769.0 / 17280.0 + p * (-221.0 / 8505.0))))))


cdef inline double _one_plus_e_times(double x) nogil:
    cdef double prod = _E_HI * x
    cdef double err = fma(_E_HI, x, -prod)
    return (1.0 + prod) + (err + _E_LO * x)


cdef inline double _u_plus_log1m(double u) nogil:
    cdef double acc = 0.0
    cdef int n
    if u > _LOG_SERIES_U:
        return u + log1p(-u)
    for n in range(_LOG_SERIES_TERMS, 1, -1):
        acc = acc * u + 1.0 / n
    return -acc * u * u


cdef double _w0(double x) nogil:
    cdef double q, p, w, l1, l2, ew, f, wp1, denom, dw
    cdef int i
    if x == 0.0:
        return 0.0
    q = _one_plus_e_times(x)
    if q <= 0.0:
        return -1.0
    if x < -0.25:
        p = sqrt(2.0 * q)
        w = -1.0 + _branch_series(p)
        if p < _SERIES_P_MAX:
            return w
    elif x < 3.0:
        l1 = log1p(x)
        w = l1 * (1.0 - log1p(l1) / (2.0 + l1))
    else:
        l1 = log(x)
        l2 = log(l1)
        w = l1 - l2 + l2 / l1
    for i in range(_MAX_HALLEY):
        ew = exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        if denom == 0.0:
            break
        dw = f / denom
        w = w - dw
        if fabs(dw) <= 1e-16 * (1.0 + fabs(w)):
            break
    return w


cdef double _shift(double d) nogil:
    cdef double p, u, un, g, q, qn
    cdef int i
    if d <= 0.0:
        return 0.0
    if d <= 1.0:
        p = sqrt(-2.0 * expm1(-d))
        u = _branch_series(p)
        if p < _SERIES_P_MAX:
            return u
        for i in range(_MAX_NEWTON):
            g = _u_plus_log1m(u) + d
            un = u + g * (1.0 - u) / u
            if un <= 0.0:
                un = 0.5 * u
            elif un >= 1.0:
                un = 0.5 * (1.0 + u)
            if fabs(un - u) <= 1e-16 * un:
                u = un
                break
            u = un
        return u
    q = exp(-1.0 - d)
    if q > 0.0:
        for i in range(_MAX_NEWTON):
            g = log(q) + 1.0 - q + d
            qn = q - g * q / (1.0 - q)
            if qn <= 0.0:
                qn = 0.5 * q
            if fabs(qn - q) <= 1e-16 * qn:
                q = qn
                break
            q = qn
    return 1.0 - q


cdef inline double _share(double a, double b, double v) nogil:
    cdef double d = v / a
    cdef double u, w
    if d <= 0.0:
        return 1.0
    u = _shift(d)
    w = b / expm1(u + d)
    return w if w < 1.0 else 1.0


def lambert_w0(x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat = np.array(x, dtype=np.float64, ndmin=1).ravel()
    shape = np.shape(np.array(x, ndmin=1))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i, n = flat.shape[0]
    for i in range(n):
        out[i] = _w0(flat[i])
    return out.reshape(shape)


def w0_branch_shift(delta):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat = np.array(delta, dtype=np.float64, ndmin=1).ravel()
    shape = np.shape(np.array(delta, ndmin=1))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i, n = flat.shape[0]
    for i in range(n):
        out[i] = _shift(flat[i])
    return out.reshape(shape)


def bandwidth_shares(a, b, v):
    a = np.asarray(a, dtype=np.float64)
    b_arr = np.broadcast_to(np.asarray(b, dtype=np.float64), a.shape)
    v_arr = np.broadcast_to(np.asarray(v, dtype=np.float64), a.shape)
    cdef double[::1] af = np.array(a, order="C").ravel()
    cdef double[::1] bf = np.array(b_arr, order="C").ravel()
    cdef double[::1] vf = np.array(v_arr, order="C").ravel()
    out = np.empty(af.shape[0])
    cdef double[::1] of = out
    cdef Py_ssize_t i
    for i in range(af.shape[0]):
        of[i] = _share(af[i], bf[i], vf[i])
    return out.reshape(a.shape)


def bcd_solve(cost, conv, p0, double lam, double tol, long max_sweeps):
    cdef double[:, ::1] c = np.array(cost, dtype=np.float64, order="C")
    cdef Py_ssize_t K = c.shape[0], T = c.shape[1]
    cdef double[::1] cv = np.array(
        np.broadcast_to(np.asarray(conv, dtype=np.float64), (K,)))
    p_arr = np.array(p0, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] p = p_arr
    sweeps_arr = np.zeros(K, dtype=np.int64)
    change_arr = np.full(K, np.inf)
    cdef cnp.int64_t[::1] sweeps = sweeps_arr
    cdef double[::1] change = change_arr
    cdef Py_ssize_t k, t
    cdef long it
    cdef double s, others, new, ch, d, target
    with nogil:
        for k in range(K):
            for it in range(max_sweeps):
                s = 0.0
                for t in range(T):
                    s = s + p[k, t]
                ch = 0.0
                for t in range(T):
                    target = cbrt(2.0 * cv[k] / c[k, t])
                    others = s - p[k, t]
                    new = target - others
                    if new < lam:
                        new = lam
                    if new > 1.0:
                        new = 1.0
                    d = fabs(new - p[k, t])
                    if d > ch:
                        ch = d
                    p[k, t] = new
                    s = others + new
                sweeps[k] += 1
                change[k] = ch
                if ch <= tol:
                    break
    return p_arr, sweeps_arr, change_arr


cdef double _round_total(double[:, ::1] a, double[:, ::1] b, Py_ssize_t t,
                         double v, double[::1] w) nogil:
    cdef Py_ssize_t k
    cdef double total = 0.0
    for k in range(a.shape[0]):
        w[k] = _share(a[k, t], b[k, t], v)
        total = total + w[k]
    return total


def dual_bandwidth(a, b, step_scale, double tol, long max_iter):
    cdef double[:, ::1] A = np.array(a, dtype=np.float64, order="C")
    cdef double[:, ::1] B = np.array(b, dtype=np.float64, order="C")
    cdef Py_ssize_t K = A.shape[0], T = A.shape[1]
    cdef double[::1] C = np.array(
        np.broadcast_to(np.asarray(step_scale, dtype=np.float64), (T,)))
    w_arr = np.empty((K, T))
    v_arr = np.zeros(T)
    it_arr = np.zeros(T, dtype=np.int64)
    slack_arr = np.zeros(T)
    conv_arr = np.zeros(T, dtype=bool)
    cdef double[:, ::1] W_out = w_arr
    cdef double[::1] V_out = v_arr
    cdef cnp.int64_t[::1] IT = it_arr
    cdef double[::1] SL = slack_arr
    cdef cnp.npy_bool[::1] CV = conv_arr
    cdef double[::1] w = np.empty(K)
    cdef double[::1] w_hi = np.empty(K)
    cdef Py_ssize_t t, k
    cdef long t1
    cdef double total, total_hi, lo, hi, v, vn, g
    cdef bint done
    with nogil:
        for t in range(T):
            v = 0.0
            total = _round_total(A, B, t, v, w)
            if total <= 1.0:
                for k in range(K):
                    W_out[k, t] = w[k]
                V_out[t] = 0.0
                SL[t] = 1.0 - total
                CV[t] = True
                continue
            lo = 0.0
            hi = 0.0
            for k in range(K):
                if A[k, t] > hi:
                    hi = A[k, t]
            total_hi = _round_total(A, B, t, hi, w_hi)
            while total_hi > 1.0:
                lo = hi
                hi = hi * 2.0
                total_hi = _round_total(A, B, t, hi, w_hi)
                IT[t] += 1
            done = False
            for t1 in range(max_iter):
                g = 1.0 - total
                if total <= 1.0 and g <= tol:
                    for k in range(K):
                        W_out[k, t] = w[k]
                    V_out[t] = v
                    done = True
                    break
                vn = v - C[t] / sqrt(t1 + 1.0) * g
                if vn < 0.0:
                    vn = 0.0
                if t1 % 2 == 1 or not (lo < vn and vn < hi):
                    vn = 0.5 * (lo + hi)
                if vn <= lo or vn >= hi:
                    # bracket exhausted at float resolution
                    for k in range(K):
                        W_out[k, t] = w_hi[k]
                    V_out[t] = hi
                    done = True
                    break
                total = _round_total(A, B, t, vn, w)
                v = vn
                IT[t] += 1
                if total > 1.0:
                    lo = vn
                else:
                    hi = vn
                    for k in range(K):
                        w_hi[k] = w[k]
            if not done:
                for k in range(K):
                    W_out[k, t] = w_hi[k]
                V_out[t] = hi
            CV[t] = done
            total = 0.0
            for k in range(K):
                total = total + W_out[k, t]
            SL[t] = 1.0 - total
    return w_arr, v_arr, it_arr, slack_arr, conv_arr


cdef double _PHI_SERIES_Y = 0.1
cdef int _PHI_TERMS = 24
cdef int _ROOT_ITER = 200


cdef inline double _phi(double y) nogil:
    cdef double acc = 0.0
    cdef int n
    if y >= _PHI_SERIES_Y:
        return log1p(y) - y / (1.0 + y)
    for n in range(_PHI_TERMS, 1, -1):
        acc = acc * -y + (n - 1.0) / n
    return acc * y * y


cdef inline double _marginal(double u, double b) nogil:
    cdef double y = b * exp(-u)
    return log(_phi(y)) - 2.0 * u - 2.0 * log(log1p(y))


cdef double _share_at_price(double target, double b) nogil:
    cdef double lo, f_lo, a, fa, x, fx, m, fm
    cdef int i
    if _marginal(0.0, b) >= target:
        return 1.0
    lo = -1.0
    f_lo = _marginal(lo, b) - target
    while f_lo <= 0.0:
        lo = lo * 2.0
        f_lo = _marginal(lo, b) - target
    a = lo
    fa = f_lo
    x = 0.0
    fx = _marginal(0.0, b) - target
    for i in range(_ROOT_ITER):
        if fx == 0.0 or fabs(x - a) <= 1e-15 * (fabs(x) if fabs(x) > 1.0 else 1.0):
            break
        m = (a * fx - x * fa) / (fx - fa)
        if not ((a < m < x) or (x < m < a)):
            m = 0.5 * (a + x)
        fm = _marginal(m, b) - target
        if fm * fx < 0.0:
            a = x
            fa = fx
        else:
            fa = fa * 0.5
        x = m
        fx = fm
    return exp(x)


cdef double _split_total(double[:, ::1] lc, double[:, ::1] B, Py_ssize_t t,
                         double mu, double[:, ::1] out) nogil:
    cdef Py_ssize_t k
    cdef double s = 0.0
    for k in range(lc.shape[0]):
        out[k, t] = _share_at_price(mu - lc[k, t], B[k, t])
        s = s + out[k, t]
    return s - 1.0


def min_energy_bandwidth(c, b, double tol, long max_iter):
    cdef double[:, ::1] lc = np.log(np.array(c, dtype=np.float64, order="C"))
    cdef double[:, ::1] B = np.array(b, dtype=np.float64, order="C")
    cdef Py_ssize_t K = lc.shape[0], T = lc.shape[1]
    w_arr = np.empty((K, T))
    it_arr = np.zeros(T, dtype=np.int64)
    cdef double[:, ::1] out = w_arr
    cdef cnp.int64_t[::1] IT = it_arr
    cdef Py_ssize_t t, k
    cdef long i
    cdef double mu_lo, f_lo, mu_hi, f_hi, step, a, fa, x, fx, m, fm, s, v
    with nogil:
        for t in range(T):
            if K == 1:
                out[0, t] = 1.0
                continue
            mu_lo = _marginal(0.0, B[0, t]) + lc[0, t]
            for k in range(1, K):
                v = _marginal(0.0, B[k, t]) + lc[k, t]
                if v < mu_lo:
                    mu_lo = v
            f_lo = _split_total(lc, B, t, mu_lo, out)
            step = 1.0
            mu_hi = mu_lo + step
            f_hi = _split_total(lc, B, t, mu_hi, out)
            while f_hi > 0.0:
                step = step * 2.0
                mu_lo = mu_hi
                f_lo = f_hi
                mu_hi = mu_hi + step
                f_hi = _split_total(lc, B, t, mu_hi, out)
            a = mu_lo
            fa = f_lo
            x = mu_hi
            fx = f_hi
            i = 0
            while i < max_iter:
                if fabs(fx) <= tol or fabs(x - a) <= 1e-15 * (fabs(x) if fabs(x) > 1.0 else 1.0):
                    break
                m = (a * fx - x * fa) / (fx - fa)
                if not ((a < m < x) or (x < m < a)):
                    m = 0.5 * (a + x)
                fm = _split_total(lc, B, t, m, out)
                if fm * fx < 0.0:
                    a = x
                    fa = fx
                else:
                    fa = fa * 0.5
                x = m
                fx = fm
                i += 1
            IT[t] = i
            s = _split_total(lc, B, t, x, out) + 1.0
            if s > 1.0:
                for k in range(K):
                    out[k, t] = out[k, t] / s
    return w_arr, it_arr
