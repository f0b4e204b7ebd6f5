"""Brute-force reference implementations used to check the fast code paths."""

import numpy as np


def naive_conv2d(x, w, b, stride, pads):
    """Six nested loops over (n, co, i, j, ci, ki, kj); pads = (top, bottom, left, right)."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    top, bottom, left, right = pads
    xp = np.zeros((n, cin, h + top + bottom, wd + left + right))
    xp[:, :, top:top + h, left:left + wd] = x
    ho = (h + top + bottom - kh) // stride + 1
    wo = (wd + left + right - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for a in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    s = 0.0 if b is None else float(b[o])
                    for c in range(cin):
                        for p in range(kh):
                            for q in range(kw):
                                s += xp[a, c, i * stride + p, j * stride + q] * w[o, c, p, q]
                    out[a, o, i, j] = s
    return out


def box_average(img, fy, fx):
    """Mean of each fy x fx block, rounded half up."""
    h, w = img.shape
    out = np.zeros((h // fy, w // fx), dtype=np.uint8)
    for i in range(h // fy):
        for j in range(w // fx):
            total = 0
            for p in range(fy):
                for q in range(fx):
                    total += int(img[i * fy + p, j * fx + q])
            # integer half-up rounding of total / (fy*fx)
            out[i, j] = (2 * total + fy * fx) // (2 * fy * fx)
    return out


def _clamped(img, i, j):
    h, w = img.shape
    return int(img[min(max(i, 0), h - 1), min(max(j, 0), w - 1)])


def max_filter(img, size=3):
    r = size // 2
    h, w = img.shape
    out = np.zeros_like(img)
    for i in range(h):
        for j in range(w):
            out[i, j] = max(_clamped(img, i + p, j + q) for p in range(-r, r + 1) for q in range(-r, r + 1))
    return out


def sort_median(img, window=3):
    r = window // 2
    h, w = img.shape
    out = np.zeros_like(img)
    for i in range(h):
        for j in range(w):
            vals = sorted(_clamped(img, i + p, j + q) for p in range(-r, r + 1) for q in range(-r, r + 1))
            out[i, j] = vals[len(vals) // 2]
    return out


def finite_diff(f, x, eps=1e-6):
    """Central differences of scalar f with respect to every element of x (modified in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def brute_force_vote(votes, probs):
    """Majority class; ties -> larger summed probability; then lower index. Written as explicit scans."""
    k = len(probs[0])
    counts = [0] * k
    for v in votes:
        counts[v] += 1
    best = None
    for c in range(k):
        if best is None:
            best = c
            continue
        if counts[c] > counts[best]:
            best = c
        elif counts[c] == counts[best]:
            sc = sum(p[c] for p in probs)
            sb = sum(p[best] for p in probs)
            if sc > sb:
                best = c
    return best, counts
