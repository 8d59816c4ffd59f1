"""Pure numpy implementations of the solver's inner kernels.

These follow ``_ckernels.pyx`` step for step, vectorised over array elements
instead of looping in C. Results agree with the compiled backend to rounding.
"""

import math

import numpy as np

BACKEND = "python"

_SERIES_P_MAX = 1e-3
_MAX_HALLEY = 64
_MAX_NEWTON = 64
_E_HI = 2.718281828459045
_E_LO = 1.4456468917292502e-16
_SPLIT = 134217729.0  # 2**27 + 1
_LOG_SERIES_U = 0.25
_LOG_SERIES_TERMS = 26


def _one_plus_e_times(x):
    # 1 + e*x with the product error recovered exactly (Dekker), so the
    # distance to the branch point keeps its digits when x is near -1/e
    prod = _E_HI * x
    t = _SPLIT * x
    xh = t - (t - x)
    xl = x - xh
    t = _SPLIT * _E_HI
    eh = t - (t - _E_HI)
    el = _E_HI - eh
    err = ((eh * xh - prod) + eh * xl + el * xh) + el * xl
    return (1.0 + prod) + (err + _E_LO * x)


def _u_plus_log1m(u):
    # u + log(1 - u) = -(u^2/2 + u^3/3 + ...), summed directly for small u
    out = u + np.log1p(-u)
    small = u <= _LOG_SERIES_U
    if small.any():
        us = u[small]
        acc = np.zeros_like(us)
        for n in range(_LOG_SERIES_TERMS, 1, -1):
            acc = acc * us + 1.0 / n
        out[small] = -acc * us * us
    return out


def _branch_series(p):
    # 1 + W0(x) around x = -1/e, in powers of p = sqrt(2 (1 + e x))
    return p * (1.0 + p * (-1.0 / 3.0 + p * (11.0 / 72.0 + p * (-43.0 / 540.0
                + p * (769.0 / 17280.0 + p * (-221.0 / 8505.0))))))


def lambert_w0(x):
    """Principal-branch Lambert W of an array with ``x >= -1/e`` (unchecked)."""
    x = np.array(x, dtype=np.float64, ndmin=1)
    shape = x.shape
    x = x.ravel()
    w = np.zeros_like(x)
    q = _one_plus_e_times(x)
    at_branch = q <= 0.0
    w[at_branch] = -1.0

    near = (x < -0.25) & ~at_branch
    mid = (x >= -0.25) & (x < 3.0) & (x != 0.0)
    far = x >= 3.0
    p = np.sqrt(2.0 * np.where(near, q, 0.0))
    w[near] = -1.0 + _branch_series(p[near])
    l1p = np.log1p(x[mid])
    w[mid] = l1p * (1.0 - np.log1p(l1p) / (2.0 + l1p))
    l1 = np.log(x[far])
    l2 = np.log(l1)
    w[far] = l1 - l2 + l2 / l1

    active = (near & (p >= _SERIES_P_MAX)) | mid | far
    for _ in range(_MAX_HALLEY):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        wi = w[idx]
        ew = np.exp(wi)
        f = wi * ew - x[idx]
        wp1 = wi + 1.0
        denom = ew * wp1 - (wi + 2.0) * f / (2.0 * wp1)
        ok = denom != 0.0
        dw = np.where(ok, f / np.where(ok, denom, 1.0), 0.0)
        wi = wi - dw
        w[idx] = wi
        active[idx] = ok & (np.abs(dw) > 1e-16 * (1.0 + np.abs(wi)))
    return w.reshape(shape)


def w0_branch_shift(delta):
    """Return ``u = 1 + W0(-exp(-1 - delta))`` for ``delta >= 0``.

    Solved directly from ``u + log(1 - u) = -delta`` so the result keeps full
    relative precision near the branch point (small ``delta``) and as ``u``
    approaches 1 (large ``delta``).
    """
    d = np.array(delta, dtype=np.float64, ndmin=1)
    shape = d.shape
    d = d.ravel()
    u = np.zeros_like(d)

    small = (d > 0.0) & (d <= 1.0)
    p = np.sqrt(-2.0 * np.expm1(-np.where(small, d, 0.0)))
    u[small] = _branch_series(p[small])
    active = small & (p >= _SERIES_P_MAX)
    for _ in range(_MAX_NEWTON):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        ui = u[idx]
        g = _u_plus_log1m(ui) + d[idx]
        un = ui + g * (1.0 - ui) / ui
        un = np.where(un <= 0.0, 0.5 * ui, un)
        un = np.where(un >= 1.0, 0.5 * (1.0 + ui), un)
        u[idx] = un
        active[idx] = np.abs(un - ui) > 1e-16 * un

    # q = 1 - u solves log(q) + 1 - q + delta = 0
    large = d > 1.0
    q = np.exp(-1.0 - d[large])
    dl = d[large]
    act = q > 0.0
    for _ in range(_MAX_NEWTON):
        idx = np.flatnonzero(act)
        if idx.size == 0:
            break
        qi = q[idx]
        g = np.log(qi) + 1.0 - qi + dl[idx]
        qn = qi - g * qi / (1.0 - qi)
        qn = np.where(qn <= 0.0, 0.5 * qi, qn)
        q[idx] = qn
        act[idx] = np.abs(qn - qi) > 1e-16 * qn
    u[large] = 1.0 - q
    return u.reshape(shape)


def bandwidth_shares(a, b, v):
    """Stationary bandwidth shares clipped to [0, 1].

    ``a = alpha*beta*W`` and ``b = P*h/(W*N0)`` are (K, T) arrays, ``v`` is the
    per-round price (T,).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    delta = np.broadcast_to(np.asarray(v, dtype=np.float64), a.shape) / a
    u = w0_branch_shift(delta)
    w = np.ones_like(delta)
    pos = delta > 0.0
    with np.errstate(over="ignore"):
        w[pos] = np.minimum(1.0, b[pos] / np.expm1(u[pos] + delta[pos]))
    return w


def bcd_solve(cost, conv, p0, lam, tol, max_sweeps):
    """Cyclic coordinate minimisation of ``conv/(sum p)^2 + sum cost*p``.

    Row ``k`` is an independent problem; ``conv`` holds one coefficient per
    row. Returns ``(p, sweeps, last_change)`` with per-row counters.
    """
    cost = np.asarray(cost, dtype=np.float64)
    conv = np.broadcast_to(np.asarray(conv, dtype=np.float64), cost.shape[:1])
    p = np.array(p0, dtype=np.float64, copy=True)
    K, T = cost.shape
    target = np.cbrt(2.0 * conv[:, None] / cost)
    sweeps = np.zeros(K, dtype=np.int64)
    change = np.full(K, np.inf)
    active = np.ones(K, dtype=bool)
    for _ in range(max_sweeps):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        pr = p[rows]
        tr = target[rows]
        s = pr.sum(axis=1)
        ch = np.zeros(rows.size)
        for t in range(T):
            others = s - pr[:, t]
            new = np.minimum(1.0, np.maximum(lam, tr[:, t] - others))
            ch = np.maximum(ch, np.abs(new - pr[:, t]))
            pr[:, t] = new
            s = others + new
        p[rows] = pr
        sweeps[rows] += 1
        change[rows] = ch
        active[rows[ch <= tol]] = False
    return p, sweeps, change


def dual_bandwidth(a, b, step_scale, tol, max_iter):
    """Per-round subgradient price search for the bandwidth subproblem.

    Each round keeps a bracket ``[lo, hi]`` on the price with
    ``sum w(lo) > 1 >= sum w(hi)``. Even iterations take the subgradient
    step when it stays inside the bracket; odd iterations (and escaping steps)
    bisect, so the bracket at least halves every two iterations. Returns
    ``(w, v, iters, slack, converged)`` with ``slack = 1 - sum w`` at the
    returned price.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    K, T = a.shape
    c = np.array(np.broadcast_to(np.asarray(step_scale, dtype=np.float64), (T,)))

    v = np.zeros(T)
    w = bandwidth_shares(a, b, v)
    total = w.sum(axis=0)
    iters = np.zeros(T, dtype=np.int64)
    converged = total <= 1.0
    active = ~converged

    lo = np.zeros(T)
    hi = a.max(axis=0)
    w_hi = bandwidth_shares(a, b, hi)
    over = active & (w_hi.sum(axis=0) > 1.0)
    while over.any():
        lo[over] = hi[over]
        hi[over] *= 2.0
        w_hi[:, over] = bandwidth_shares(a[:, over], b[:, over], hi[over])
        iters[over] += 1
        over &= w_hi.sum(axis=0) > 1.0

    out_w = w.copy()
    out_v = v.copy()
    for t1 in range(max_iter):
        g = 1.0 - total
        done = active & (total <= 1.0) & (g <= tol)
        out_w[:, done] = w[:, done]
        out_v[done] = v[done]
        converged |= done
        active &= ~done
        if not active.any():
            break
        idx = np.flatnonzero(active)
        vn = np.maximum(v[idx] - c[idx] / np.sqrt(t1 + 1.0) * g[idx], 0.0)
        outside = ~((lo[idx] < vn) & (vn < hi[idx])) | (t1 % 2 == 1)
        vn = np.where(outside, 0.5 * (lo[idx] + hi[idx]), vn)
        # bracket exhausted at float resolution
        stuck = (vn <= lo[idx]) | (vn >= hi[idx])
        if stuck.any():
            sidx = idx[stuck]
            out_w[:, sidx] = w_hi[:, sidx]
            out_v[sidx] = hi[sidx]
            converged[sidx] = True
            active[sidx] = False
            idx = idx[~stuck]
            vn = vn[~stuck]
            if idx.size == 0:
                break
        wn = bandwidth_shares(a[:, idx], b[:, idx], vn)
        tn = wn.sum(axis=0)
        w[:, idx] = wn
        total[idx] = tn
        v[idx] = vn
        iters[idx] += 1
        up = tn > 1.0
        lo[idx[up]] = vn[up]
        hi[idx[~up]] = vn[~up]
        w_hi[:, idx[~up]] = wn[:, ~up]

    left = active
    out_w[:, left] = w_hi[:, left]
    out_v[left] = hi[left]
    slack = 1.0 - out_w.sum(axis=0)
    return out_w, out_v, iters, slack, converged


# ---- exact bandwidth split for fixed selection probabilities
# min sum_k c_k / R_k(w_k) s.t. sum_k w_k = 1, solved per round. With
# y = b/w, L = log(1+y) and phi = L - y/(1+y), stationarity reads
# log(phi) - 2 log(w) - 2 log(L) = mu - log(c_k) for a common price mu.
# Scalar code on purpose: it mirrors the compiled version line by line.

_PHI_SERIES_Y = 0.1
_PHI_TERMS = 24
_ROOT_ITER = 200


def _phi(y):
    if y >= _PHI_SERIES_Y:
        return math.log1p(y) - y / (1.0 + y)
    acc = 0.0
    for n in range(_PHI_TERMS, 1, -1):
        acc = acc * -y + (n - 1.0) / n
    return acc * y * y


def _marginal(u, b):
    y = b * math.exp(-u)
    return math.log(_phi(y)) - 2.0 * u - 2.0 * math.log(math.log1p(y))


def _share_at_price(target, b):
    # decreasing in u = log(w); bracket [lo, 0] then Illinois
    if _marginal(0.0, b) >= target:
        return 1.0
    lo = -1.0
    f_lo = _marginal(lo, b) - target
    while f_lo <= 0.0:
        lo *= 2.0
        f_lo = _marginal(lo, b) - target
    a, fa = lo, f_lo
    x, fx = 0.0, _marginal(0.0, b) - target
    for _ in range(_ROOT_ITER):
        if fx == 0.0 or abs(x - a) <= 1e-15 * max(1.0, abs(x)):
            break
        m = (a * fx - x * fa) / (fx - fa)
        if not min(a, x) < m < max(a, x):
            m = 0.5 * (a + x)
        fm = _marginal(m, b) - target
        if fm * fx < 0.0:
            a, fa = x, fx
        else:
            fa *= 0.5
        x, fx = m, fm
    return math.exp(x)


def _round_split(c, b, out, tol, max_iter):
    K = len(c)
    lc = [math.log(ck) for ck in c]
    if K == 1:
        out[0] = 1.0
        return 0
    # at mu_lo the cheapest-to-serve client takes the whole band
    mu_lo = min(_marginal(0.0, b[k]) + lc[k] for k in range(K))

    def total(mu):
        s = 0.0
        for k in range(K):
            out[k] = _share_at_price(mu - lc[k], b[k])
            s += out[k]
        return s - 1.0

    f_lo = total(mu_lo)
    step = 1.0
    mu_hi = mu_lo + step
    f_hi = total(mu_hi)
    while f_hi > 0.0:
        step *= 2.0
        mu_lo, f_lo = mu_hi, f_hi
        mu_hi = mu_hi + step
        f_hi = total(mu_hi)
    a, fa, x, fx = mu_lo, f_lo, mu_hi, f_hi
    it = 0
    for it in range(max_iter):
        if abs(fx) <= tol or abs(x - a) <= 1e-15 * max(1.0, abs(x)):
            break
        m = (a * fx - x * fa) / (fx - fa)
        if not min(a, x) < m < max(a, x):
            m = 0.5 * (a + x)
        fm = total(m)
        if fm * fx < 0.0:
            a, fa = x, fx
        else:
            fa *= 0.5
        x, fx = m, fm
    s = total(x) + 1.0
    if s > 1.0:
        for k in range(K):
            out[k] /= s
    return it


def min_energy_bandwidth(c, b, tol, max_iter):
    """Per-round bandwidth split minimising ``sum_k c_k / R_k(w_k)`` with a
    full band. ``c`` and ``b`` are (K, T); returns ``(w, iterations)``."""
    c = np.asarray(c, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    K, T = c.shape
    w = np.empty((K, T))
    iters = np.zeros(T, dtype=np.int64)
    col = [0.0] * K
    for t in range(T):
        iters[t] = _round_split(c[:, t].tolist(), b[:, t].tolist(), col, tol, max_iter)
        w[:, t] = col
    return w, iters
