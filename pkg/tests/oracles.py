"""Independent brute-force reference implementations used by the tests.

Everything here is explicit loops or direct formulas, deliberately kept
apart from the library's vectorized paths.
"""

import numpy as np


def conv2d_loops(x, kernel, bias, stride, padding):
    """Quadruple-loop direct-summation convolution oracle."""
    n, cin, h, w = x.shape
    cout, _, k, _ = kernel.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for ni in range(n):
        for o in range(cout):
            for y in range(ho):
                for xo in range(wo):
                    acc = bias[o]
                    for c in range(cin):
                        for dy in range(k):
                            for dx in range(k):
                                yy = y * stride + dy - padding
                                xx = xo * stride + dx - padding
                                if 0 <= yy < h and 0 <= xx < w:
                                    acc += x[ni, c, yy, xx] * kernel[o, c, dy, dx]
                    out[ni, o, y, xo] = acc
    return out


def laplacian_loops(gray):
    """Direct two-loop second-difference stencil with zero padding."""
    _, h, w = gray.shape
    g = gray[0]

    def at(i, j):
        return g[i, j] if 0 <= i < h and 0 <= j < w else 0.0

    out = np.zeros((1, h, w))
    for i in range(h):
        for j in range(w):
            out[0, i, j] = (at(i + 1, j) + at(i - 1, j) + at(i, j + 1)
                            + at(i, j - 1) - 4.0 * at(i, j))
    return out


def region_logits_loops(edge, fc_kernel, fc_bias, fp_kernel, fp_bias, r):
    """Explicit conv -> relu -> 1x1 conv -> per-region mean composition."""
    hidden = conv2d_loops(edge[None], fc_kernel, fc_bias, stride=1, padding=1)[0]
    hidden = np.maximum(hidden, 0.0)
    d = fc_kernel.shape[0]
    _, h, w = edge.shape
    per_pixel = np.zeros((2, h, w))
    for kk in range(2):
        for y in range(h):
            for x in range(w):
                per_pixel[kk, y, x] = fp_bias[kk] + sum(
                    fp_kernel[kk, c, 0, 0] * hidden[c, y, x] for c in range(d))
    gh, gw = h // r, w // r
    out = np.zeros((gh, gw, 2))
    for gy in range(gh):
        for gx in range(gw):
            block = per_pixel[:, gy * r:(gy + 1) * r, gx * r:(gx + 1) * r]
            out[gy, gx] = block.reshape(2, -1).mean(axis=1)
    return out


def apply_prompt_loops(x, template, support, mask):
    """Triple-loop elementwise prompt application."""
    out = np.array(x)
    c, h, w = x.shape
    for ci in range(c):
        for i in range(h):
            for j in range(w):
                out[ci, i, j] += template[ci, i, j] * support[0, i, j] * mask[0, i, j]
    return out
