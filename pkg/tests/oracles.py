"""Independent reference implementations used as test oracles.

Deliberately naive (explicit loops, no shared code with the package) so a
bug in the vectorized code cannot hide in both places.
"""

import math

import numpy as np


def inception_score_loops(probs, n_splits):
    n = len(probs)
    bounds = []
    base, extra = divmod(n, n_splits)
    start = 0
    for k in range(n_splits):
        size = base + (1 if k < extra else 0)
        bounds.append((start, start + size))
        start += size
    scores = []
    for lo, hi in bounds:
        rows = [list(probs[i]) for i in range(lo, hi)]
        c = len(rows[0])
        marginal = [sum(r[j] for r in rows) / len(rows) for j in range(c)]
        total = 0.0
        for r in rows:
            kl = 0.0
            for j in range(c):
                if r[j] > 0:
                    kl += r[j] * math.log(r[j] / marginal[j])
            total += kl
        scores.append(math.exp(total / len(rows)))
    mean = sum(scores) / len(scores)
    std = math.sqrt(sum((s - mean) ** 2 for s in scores) / len(scores))
    return mean, std, scores


def pearson_spreadsheet(xs, ys):
    """CORREL as a spreadsheet computes it: sums of products, one pass each."""
    n = len(xs)
    sx, sy = sum(xs), sum(ys)
    sxx = sum(x * x for x in xs)
    syy = sum(y * y for y in ys)
    sxy = sum(x * y for x, y in zip(xs, ys))
    return (n * sxy - sx * sy) / math.sqrt((n * sxx - sx * sx) * (n * syy - sy * sy))


def point_in_convex(px, py, verts, eps=1e-9):
    """Half-plane test against every edge of a counter-clockwise polygon."""
    n = len(verts)
    for i in range(n):
        x0, y0 = verts[i]
        x1, y1 = verts[(i + 1) % n]
        if (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0) < -eps:
            return False
    return True


def rasterize_per_pixel(verts, size):
    img = np.zeros((size, size))
    for i in range(size):
        for j in range(size):
            img[i, j] = 1.0 if point_in_convex(j + 0.5, i + 0.5, verts) else 0.0
    return img


def adam_scalar(theta, grad_fn, steps, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (math.sqrt(vhat) + eps)
    return theta


def conv2d_loops(x, w, stride, padding):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[b, oc, i, j] = float(np.sum(patch * w[oc]))
    return out


def conv2d_transpose_loops(x, w, stride, padding):
    """Scatter form: every input pixel stamps the kernel into the output."""
    n, c, h, wd = x.shape
    _, o, kh, kw = w.shape
    full = np.zeros((n, o, (h - 1) * stride + kh, (wd - 1) * stride + kw))
    for b in range(n):
        for ic in range(c):
            for i in range(h):
                for j in range(wd):
                    full[b, :, i * stride:i * stride + kh, j * stride:j * stride + kw] += x[b, ic, i, j] * w[ic]
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (wd - 1) * stride - 2 * padding + kw
    return full[:, :, padding:padding + ho, padding:padding + wo]


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar ``f`` with respect to array ``x`` (mutated in place and restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))
