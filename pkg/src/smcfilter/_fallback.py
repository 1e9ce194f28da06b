"""Pure-Python resampling kernels.

Operation-for-operation twin of the compiled ``_kernels`` module, used when
the extension is not built or ``SMCFILTER_PURE_PYTHON`` is set.
"""

import math

import numpy as np

SNAP = 1e-9


def _snap(c):
    r = math.floor(c + 0.5)
    if abs(c - r) < SNAP:
        return float(r)
    return c


def _prefix(pi, order, N):
    R = len(pi)
    out = [0.0] * (R + 1)
    s = 0.0
    comp = 0.0
    dN = float(N)
    for i in range(R):
        y = pi[order[i]] - comp
        t = s + y
        comp = (t - s) - y
        s = t
        c = _snap(dN * s)
        if c > dN:
            c = dN
        if c < out[i]:
            c = out[i]
        out[i + 1] = c
    out[R] = dN
    return out


def systematic_counts(pi, N, u, order):
    pi = [float(x) for x in pi]
    R = len(pi)
    n = len(u)
    counts = np.zeros((n, R), dtype=np.int64)
    for i in range(n):
        row = [int(j) for j in order[i]]
        c = _prefix(pi, row, N)
        uu = float(u[i])
        lo = math.ceil(c[0] + uu)
        for k in range(R):
            hi = math.ceil(c[k + 1] + uu)
            counts[i, row[k]] = hi - lo
            lo = hi
    return counts


def _split(count, mu_l, mu_r, u):
    fl = math.floor(mu_l)
    fr = math.floor(mu_r)
    rl = mu_l - fl
    rr = mu_r - fr
    if rl > 1.0 - SNAP:
        fl += 1
        rl = 0.0
    elif rl < SNAP:
        rl = 0.0
    if rr > 1.0 - SNAP:
        fr += 1
        rr = 0.0
    elif rr < SNAP:
        rr = 0.0
    k = count - fl - fr
    if k <= 0:
        nl = fl
    elif k >= 2:
        nl = fl + 1
    else:
        if rl + rr < 1.0:
            p = rl / (rl + rr) if rl + rr > 0.0 else 0.5
        else:
            p = (1.0 - rr) / (2.0 - rl - rr)
        nl = fl + (1 if u < p else 0)
    return min(max(nl, 0), count)


def tree_counts(pi, N, u):
    pi = [float(x) for x in pi]
    R = len(pi)
    n = u.shape[0]
    c = _prefix(pi, list(range(R)), N)
    counts = np.zeros((n, R), dtype=np.int64)
    for i in range(n):
        urow = u[i].tolist()
        node = 0
        stack = [(0, R, int(N))]
        while stack:
            lo, hi, cnt = stack.pop()
            if hi - lo == 1:
                counts[i, lo] = cnt
                continue
            mid = lo + (hi - lo + 1) // 2
            nl = _split(cnt, c[mid] - c[lo], c[hi] - c[mid], urow[node])
            node += 1
            stack.append((mid, hi, cnt - nl))
            stack.append((lo, mid, nl))
    return counts
