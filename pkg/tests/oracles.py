"""Independent brute-force references used across the test suite."""

from collections import deque
from fractions import Fraction

import numpy as np


def otsu_bin_bruteforce(values, n_bins=256):
    """Exhaustive Otsu: exact rational between-class variance for every split."""
    v = [float(x) for x in np.asarray(values, dtype=np.float64).ravel()]
    lo, hi = min(v), max(v)
    counts = [0] * n_bins
    for x in v:
        b = int(np.floor((x - lo) / (hi - lo) * n_bins))
        counts[min(max(b, 0), n_bins - 1)] += 1
    n = len(v)
    best, best_k = Fraction(-1), None
    for k in range(n_bins):
        n0 = sum(counts[: k + 1])
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            var = Fraction(0)
        else:
            mu0 = Fraction(sum(i * counts[i] for i in range(k + 1)), n0)
            mu1 = Fraction(sum(i * counts[i] for i in range(k + 1, n_bins)), n1)
            var = Fraction(n0, n) * Fraction(n1, n) * (mu0 - mu1) ** 2
        if var > best:
            best, best_k = var, k
    return best_k, lo + (best_k + 1) * (hi - lo) / n_bins


def conv2d_naive(x, k, b):
    """Six nested loops, zero padding, cross-correlation."""
    cin, h, w = x.shape
    cout = k.shape[0]
    out = np.zeros((cout, h, w))
    for o in range(cout):
        for y in range(h):
            for xx in range(w):
                s = b[o]
                for i in range(cin):
                    for dy in range(3):
                        for dx in range(3):
                            yy, xs = y + dy - 1, xx + dx - 1
                            if 0 <= yy < h and 0 <= xs < w:
                                s += x[i, yy, xs] * k[o, i, dy, dx]
                out[o, y, xx] = s
    return out


def neighbor_offsets(connectivity):
    """Offsets with max |d| <= 1 and sum |d| <= 1 (6), 2 (18) or 3 (26)."""
    limit = {6: 1, 18: 2, 26: 3}[connectivity]
    return [
        (a, b, c)
        for a in (-1, 0, 1)
        for b in (-1, 0, 1)
        for c in (-1, 0, 1)
        if (a, b, c) != (0, 0, 0) and abs(a) + abs(b) + abs(c) <= limit
    ]


def flood_fill_partition(mask, connectivity=18):
    """BFS components as a set of frozensets of voxel coordinates."""
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    offs = neighbor_offsets(connectivity)
    parts = set()
    for start in zip(*np.nonzero(mask)):
        if seen[start]:
            continue
        comp = []
        q = deque([start])
        seen[start] = True
        while q:
            p = q.popleft()
            comp.append(p)
            for d in offs:
                n = (p[0] + d[0], p[1] + d[1], p[2] + d[2])
                if all(0 <= n[i] < mask.shape[i] for i in range(3)) and mask[n] and not seen[n]:
                    seen[n] = True
                    q.append(n)
        parts.add(frozenset(comp))
    return parts


def label_partition(labels):
    parts = {}
    for p in zip(*np.nonzero(labels)):
        parts.setdefault(int(labels[p]), []).append(p)
    return {frozenset(v) for v in parts.values()}


def step_cdf_quadrature(pairs, y, upper, dx=1e-4):
    """Midpoint rule for the CRPS integral of a step CDF."""
    ts = np.array([t for t, _ in pairs])
    ps = np.array([p for _, p in pairs])
    lo = min(0.0, ts[0], y)
    n = int(round((upper - lo) / dx))
    x = lo + (np.arange(n) + 0.5) * (upper - lo) / n
    k = np.searchsorted(ts, x, side="right")
    F = np.where(k == 0, 0.0, ps[np.maximum(k - 1, 0)])
    ind = (x >= y).astype(float)
    return float(np.sum((F - ind) ** 2) * (upper - lo) / n)


def scalar_adam(params, grads_seq, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam on a list of Python floats."""
    p = list(params)
    m = [0.0] * len(p)
    v = [0.0] * len(p)
    for t, g in enumerate(grads_seq, start=1):
        for i in range(len(p)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] ** 2
            mh = m[i] / (1 - b1**t)
            vh = v[i] / (1 - b2**t)
            p[i] -= lr * mh / (vh**0.5 + eps)
    return p


def finite_difference_errors(p, x, y, eps=1e-6):
    """Relative error of every analytic gradient entry vs central differences.

    ``p`` must be float64; it is perturbed in place and restored.
    """
    from satcast.neural import model_backward, model_forward

    _, grads = model_backward(p, x, y)

    def loss():
        return float(np.mean((model_forward(p, x) - y) ** 2))

    errs = []
    for name, w in p.arrays.items():
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + eps
            lp = loss()
            w[idx] = old - eps
            lm = loss()
            w[idx] = old
            fd = (lp - lm) / (2 * eps)
            an = grads.arrays[name][idx]
            errs.append(abs(fd - an) / max(abs(fd), abs(an), 1e-12))
    return np.array(errs)


def random_mini_params(arch, cell, seed, scale=0.5):
    """Float64 miniature parameters drawn uniformly in +-scale, biases included."""
    from satcast.neural import NetParams

    rng = np.random.default_rng(seed)
    p = NetParams.init(arch, cell, seed=seed, dtype=np.float64)
    for w in p.arrays.values():
        w[...] = rng.uniform(-scale, scale, w.shape)
    return p
