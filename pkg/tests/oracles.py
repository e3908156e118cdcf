"""Independent reference computations used by the tests.

Nothing here calls into xdistill's numeric paths; each function is a
brute-force or textbook evaluation of the quantity under test.
"""

import itertools
import math

import numpy as np


def central_difference(f, arrays, step=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. each array (mutated in place then restored)."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            fp = f()
            arr[idx] = orig - step
            fm = f()
            arr[idx] = orig
            g[idx] = (fp - fm) / (2 * step)
        grads.append(g)
    return grads


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return float(np.abs(a - b).max() / scale)


def sliding_window_conv(x, w, b, stride=1, padding=0):
    """Direct nested-loop cross-correlation of one image ``(C,H,W)``."""
    c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    xp = np.zeros((c_in, h + 2 * padding, wd + 2 * padding))
    xp[:, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for co in range(c_out):
        for i in range(ho):
            for j in range(wo):
                acc = b[co]
                for ci in range(c_in):
                    for a in range(kh):
                        for bb in range(kw):
                            acc += xp[ci, i * stride + a, j * stride + bb] * w[co, ci, a, bb]
                out[co, i, j] = acc
    return out


def window_max(x, size, stride):
    c, h, w = x.shape
    ho = (h - size) // stride + 1
    wo = (w - size) // stride + 1
    out = np.empty((c, ho, wo))
    for ch in range(c):
        for i in range(ho):
            for j in range(wo):
                out[ch, i, j] = max(
                    x[ch, i * stride + a, j * stride + b] for a in range(size) for b in range(size)
                )
    return out


def exact_shapley(value, m):
    """Shapley values of a set function ``value(mask) -> float`` by enumerating every coalition."""
    phi = np.zeros(m)
    cache = {}

    def v(members):
        key = tuple(sorted(members))
        if key not in cache:
            mask = np.zeros(m)
            mask[list(key)] = 1
            cache[key] = value(mask)
        return cache[key]

    for i in range(m):
        others = [j for j in range(m) if j != i]
        for size in range(m):
            weight = math.factorial(size) * math.factorial(m - size - 1) / math.factorial(m)
            for subset in itertools.combinations(others, size):
                phi[i] += weight * (v(subset + (i,)) - v(subset))
    return phi


def srgb_to_lab_reference(rgb):
    """CIE L*a*b* (D65) of one sRGB triple in [0,1], written from the published formulas."""
    def lin(c):
        return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4

    r, g, b = (lin(float(c)) for c in rgb)
    x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b
    y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b
    z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b
    xn, yn, zn = 0.95047, 1.0, 1.08883

    def f(t):
        d = 6 / 29
        return t ** (1 / 3) if t > d ** 3 else t / (3 * d * d) + 4 / 29

    fx, fy, fz = f(x / xn), f(y / yn), f(z / zn)
    return 116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)
