"""Scalar kernels and the fused optimisation loop.

Everything here is written in the numba-compatible subset so that the same
source runs compiled or interpreted (see :mod:`mabsgd._accel`). Integer codes
are used instead of enums so the compiled signatures stay simple.
"""

import math

import numpy as np

from ._accel import njit

# loss codes
LOGISTIC = 0
SQUARED_HINGE = 1
RIDGE = 2

# regulariser codes
REG_NONE = 0
REG_L1 = 1
REG_L2 = 2

# estimator codes
PLAIN = 0
SVRG = 1
SAGA = 2

# sampler codes
UNIFORM = 0
IMPORTANCE = 1
MABS = 2
MABS2 = 3

# schedule codes
CONSTANT = 0
INVERSE_STRONG = 1
SHIFTED = 2

# renormalise bandit weights once a leaf would exceed 1e100
LOG_OVERFLOW = math.log(1e100)


# --------------------------------------------------------------------------
# losses


@njit
def loss_value(loss, z, y):
    if loss == LOGISTIC:
        m = -y * z
        if m > 0.0:
            return m + math.log1p(math.exp(-m))
        return math.log1p(math.exp(m))
    if loss == SQUARED_HINGE:
        h = 1.0 - y * z
        if h <= 0.0:
            return 0.0
        return h * h
    r = z - y
    return 0.5 * r * r


@njit
def loss_coef(loss, z, y):
    """Derivative of the sub-cost with respect to the margin ``z = <x, w>``."""
    if loss == LOGISTIC:
        m = -y * z
        if m >= 0.0:
            s = 1.0 / (1.0 + math.exp(-m))
        else:
            e = math.exp(m)
            s = e / (1.0 + e)
        return -y * s
    if loss == SQUARED_HINGE:
        h = 1.0 - y * z
        if h <= 0.0:
            return 0.0
        return -2.0 * y * h
    return z - y


@njit
def row_dot(indptr, indices, data, i, w):
    s = 0.0
    for k in range(indptr[i], indptr[i + 1]):
        s += data[k] * w[indices[k]]
    return s


@njit
def all_coefs(indptr, indices, data, y, loss, w, out):
    for i in range(y.shape[0]):
        out[i] = loss_coef(loss, row_dot(indptr, indices, data, i, w), y[i])


@njit
def accumulate_rows(indptr, indices, data, weights, scale, out):
    """out += scale * sum_i weights[i] * x_i"""
    for i in range(weights.shape[0]):
        c = weights[i] * scale
        if c != 0.0:
            for k in range(indptr[i], indptr[i + 1]):
                out[indices[k]] += c * data[k]


@njit
def reg_value(reg, w):
    if reg == REG_L1:
        return np.sum(np.abs(w))
    if reg == REG_L2:
        return 0.5 * np.dot(w, w)
    return 0.0


@njit
def full_cost(indptr, indices, data, y, loss, reg, lam, w):
    n = y.shape[0]
    s = 0.0
    for i in range(n):
        s += loss_value(loss, row_dot(indptr, indices, data, i, w), y[i])
    return s / n + lam * reg_value(reg, w)


@njit
def step_size(kind, a, b, t):
    if kind == CONSTANT:
        return a
    if kind == INVERSE_STRONG:
        return 2.0 / (a * t)
    return 1.0 / (a + b * t)


# --------------------------------------------------------------------------
# sum tree: leaves live at nodes[size:size+n], root at nodes[1]


@njit
def tree_size(n):
    size = 1
    while size < n:
        size *= 2
    return size


@njit
def tree_rebuild(nodes, size):
    for k in range(size - 1, 0, -1):
        nodes[k] = nodes[2 * k] + nodes[2 * k + 1]


@njit
def tree_set(nodes, size, i, value):
    """Replace leaf ``i``; returns the number of nodes written."""
    k = i + size
    nodes[k] = value
    visits = 1
    k //= 2
    while k >= 1:
        nodes[k] = nodes[2 * k] + nodes[2 * k + 1]
        visits += 1
        k //= 2
    return visits


@njit
def tree_find(nodes, size, u):
    """Leaf whose half-open prefix interval contains ``u``; also returns node visits."""
    k = 1
    visits = 1
    while k < size:
        left = nodes[2 * k]
        # right-hand zero mass: rounding pushed u past the last positive leaf
        if u < left or nodes[2 * k + 1] <= 0.0:
            k = 2 * k
        else:
            u -= left
            k = 2 * k + 1
        visits += 1
    return k - size, visits


@njit
def cum_find(cum, u):
    """Smallest i with u < cum[i] (binary search over a cumulative sum)."""
    lo = 0
    hi = cum.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if u < cum[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


# --------------------------------------------------------------------------
# samplers


@njit
def sampler_draw(kind, nodes, size, n, eta, mix_p, mix_cum, u1, u2):
    """Draw an index and return it with the probability it was drawn with."""
    if kind == UNIFORM:
        i = min(int(u2 * n), n - 1)
        return i, 1.0 / n
    if kind == IMPORTANCE:
        i = cum_find(mix_cum, u2 * mix_cum[n - 1])
        return i, mix_p[i]
    total = nodes[1]
    if u1 < 1.0 - eta:
        i, _ = tree_find(nodes, size, u2 * total)
    elif kind == MABS:
        i = min(int(u2 * n), n - 1)
    else:
        i = cum_find(mix_cum, u2 * mix_cum[n - 1])
    if kind == MABS:
        floor = 1.0 / n
    else:
        floor = mix_p[i]
    return i, (1.0 - eta) * nodes[size + i] / total + eta * floor


@njit
def sampler_probs(kind, nodes, size, n, eta, mix_p, out):
    if kind == UNIFORM:
        for j in range(n):
            out[j] = 1.0 / n
    elif kind == IMPORTANCE:
        for j in range(n):
            out[j] = mix_p[j]
    else:
        total = nodes[1]
        for j in range(n):
            floor = 1.0 / n if kind == MABS else mix_p[j]
            out[j] = (1.0 - eta) * nodes[size + j] / total + eta * floor


@njit
def bandit_update(nodes, size, n, i, a, p, delta, max_leaf):
    """Multiply leaf ``i`` by exp(delta * a / p**3).

    Returns ``(max_leaf, log_shift)``; ``log_shift`` is nonzero when every leaf
    was divided by the new maximum to stay below 1e100.
    """
    x = delta * a / (p * p * p)
    leaf = nodes[size + i]
    if x <= 0.0 or leaf <= 0.0:
        return max_leaf, 0.0
    lognew = math.log(leaf) + x
    if lognew > LOG_OVERFLOW:
        for j in range(n):
            v = nodes[size + j]
            if j == i:
                nodes[size + j] = 1.0
            elif v > 0.0:
                nodes[size + j] = math.exp(math.log(v) - lognew)
        tree_rebuild(nodes, size)
        return 1.0, lognew
    new = math.exp(lognew)
    tree_set(nodes, size, i, new)
    return max(max_leaf, new), 0.0


@njit
def tree_fill(nodes, size, n, value):
    for j in range(n):
        nodes[size + j] = value
    tree_rebuild(nodes, size)


# --------------------------------------------------------------------------
# fused optimisation loop


@njit
def prox_dense(reg, lam, v, step):
    if reg == REG_L1:
        thr = step * lam
        out = np.empty_like(v)
        for k in range(v.shape[0]):
            x = v[k]
            if x > thr:
                out[k] = x - thr
            elif x < -thr:
                out[k] = x + thr
            else:
                out[k] = 0.0
        return out
    if reg == REG_L2:
        return v / (1.0 + step * lam)
    return v.copy()


@njit
def _record(indptr, indices, data, y, sqnorm, loss, reg, lam, w,
            anchor_coef, kind, nodes, size, eta, mix_p, coefs, pvec, cbar):
    n = y.shape[0]
    s = 0.0
    for i in range(n):
        z = row_dot(indptr, indices, data, i, w)
        s += loss_value(loss, z, y[i])
        coefs[i] = loss_coef(loss, z, y[i]) - anchor_coef[i]
    F = s / n + lam * reg_value(reg, w)
    sampler_probs(kind, nodes, size, n, eta, mix_p, pvec)
    ve = 0.0
    for i in range(n):
        ve += coefs[i] * coefs[i] * sqnorm[i] / (n * n) / pvec[i]
    cbar[:] = 0.0
    accumulate_rows(indptr, indices, data, coefs, 1.0 / n, cbar)
    return F, ve, ve - np.dot(cbar, cbar)


@njit
def run_loop(indptr, indices, data, y, sqnorm,
             loss, reg, lam, estimator, proximal,
             sched_kind, sched_a, sched_b,
             kind, eta, delta, reset_bin, mix_p, mix_cum,
             nodes, bandit, w, uniforms, stride,
             out_i, out_p, out_a, rec_t, rec_F, rec_Ve, rec_Vp,
             wsum, iterates, hist_a, hist_p):
    """Run ``uniforms.shape[0]`` iterations in place on ``w``.

    ``nodes`` is the sampler's sum tree (updated in place for the bandit
    samplers); ``bandit`` holds ``[max_leaf, accumulated log rescale]`` on entry
    and exit. Returns ``(steps_done, diverged, n_records)``.
    """
    n = y.shape[0]
    d = w.shape[0]
    T = uniforms.shape[0]
    keep_iterates = iterates.shape[0] > 0
    keep_history = hist_a.shape[0] > 0

    size = tree_size(n)
    max_leaf = bandit[0]

    anchor_coef = np.zeros(n)
    anchor_mean = np.zeros(d)
    bin_sum = np.zeros(d)
    if estimator != PLAIN:
        all_coefs(indptr, indices, data, y, loss, w, anchor_coef)
        accumulate_rows(indptr, indices, data, anchor_coef, 1.0 / n, anchor_mean)

    coefs = np.empty(n)
    pvec = np.empty(n)
    cbar = np.empty(d)
    g = np.empty(d)

    F, ve, vp = _record(indptr, indices, data, y, sqnorm, loss, reg, lam, w,
                        anchor_coef, kind, nodes, size, eta, mix_p, coefs, pvec, cbar)
    rec_t[0] = 0
    rec_F[0] = F
    rec_Ve[0] = ve
    rec_Vp[0] = vp
    nrec = 1
    since_reset = 0

    for s in range(T):
        t = s + 1
        if estimator == SVRG:
            if s > 0 and s % n == 0:
                for k in range(d):
                    w_snap = bin_sum[k] / n
                    cbar[k] = w_snap
                    bin_sum[k] = 0.0
                all_coefs(indptr, indices, data, y, loss, cbar, anchor_coef)
                anchor_mean[:] = 0.0
                accumulate_rows(indptr, indices, data, anchor_coef, 1.0 / n, anchor_mean)
            for k in range(d):
                bin_sum[k] += w[k]

        i, p = sampler_draw(kind, nodes, size, n, eta, mix_p, mix_cum,
                            uniforms[s, 0], uniforms[s, 1])

        if keep_history:
            sampler_probs(kind, nodes, size, n, eta, mix_p, pvec)
            for j in range(n):
                hist_p[s, j] = pvec[j]
                cj = loss_coef(loss, row_dot(indptr, indices, data, j, w), y[j]) - anchor_coef[j]
                hist_a[s, j] = cj * cj * sqnorm[j] / (n * n)

        c = loss_coef(loss, row_dot(indptr, indices, data, i, w), y[i])
        corr = c - anchor_coef[i]
        a = corr * corr * sqnorm[i] / (n * n)
        scale = corr / (n * p)
        for k in range(d):
            g[k] = anchor_mean[k]
        for k in range(indptr[i], indptr[i + 1]):
            g[indices[k]] += scale * data[k]

        out_i[s] = i
        out_p[s] = p
        out_a[s] = a
        if keep_iterates:
            iterates[s, :] = w
        for k in range(d):
            wsum[k] += t * w[k]

        gamma = step_size(sched_kind, sched_a, sched_b, t)
        if proximal:
            w[:] = prox_dense(reg, lam, w - gamma * g, gamma)
        else:
            if reg == REG_L1:
                for k in range(d):
                    w[k] -= gamma * (g[k] + lam * np.sign(w[k]))
            elif reg == REG_L2:
                for k in range(d):
                    w[k] -= gamma * (g[k] + lam * w[k])
            else:
                for k in range(d):
                    w[k] -= gamma * g[k]

        if estimator == SAGA:
            dc = (c - anchor_coef[i]) / n
            for k in range(indptr[i], indptr[i + 1]):
                anchor_mean[indices[k]] += dc * data[k]
            anchor_coef[i] = c

        finite = math.isfinite(a)
        for k in range(d):
            if not math.isfinite(w[k]):
                finite = False
        if not finite:
            rec_t[nrec] = t
            rec_F[nrec] = np.inf
            rec_Ve[nrec] = np.inf
            rec_Vp[nrec] = np.inf
            bandit[0] = max_leaf
            return t, True, nrec + 1

        if kind >= MABS:
            max_leaf, shift = bandit_update(nodes, size, n, i, a, p, delta, max_leaf)
            bandit[1] += shift
            since_reset += 1
            if reset_bin > 0 and since_reset == reset_bin:
                tree_fill(nodes, size, n, 1.0)
                max_leaf = 1.0
                since_reset = 0

        if t % stride == 0 or t == T:
            F, ve, vp = _record(indptr, indices, data, y, sqnorm, loss, reg, lam, w,
                                anchor_coef, kind, nodes, size, eta, mix_p, coefs, pvec, cbar)
            rec_t[nrec] = t
            rec_F[nrec] = F
            rec_Ve[nrec] = ve
            rec_Vp[nrec] = vp
            nrec += 1

    bandit[0] = max_leaf
    return T, False, nrec
