"""Slow, obviously-correct reference implementations used only by the tests.

Nothing here imports from the package under test.
"""

from __future__ import annotations

import math

import numpy as np


def bilinear_4nb(img: np.ndarray, x: float, y: float) -> np.ndarray:
    """Weighted sum of the four neighbours of ``(x, y)`` with border clamping.

    ``img`` is ``(H, W)`` or ``(C, H, W)``.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    _, H, W = img.shape
    x = min(max(x, 0.0), W - 1.0)
    y = min(max(y, 0.0), H - 1.0)
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x1, y1 = min(x0 + 1, W - 1), min(y0 + 1, H - 1)
    ax, ay = x - x0, y - y0
    return ((1 - ax) * (1 - ay) * img[:, y0, x0] + ax * (1 - ay) * img[:, y0, x1]
            + (1 - ax) * ay * img[:, y1, x0] + ax * ay * img[:, y1, x1])


def correlation_loops(hist, levels, p, stride, R):
    """Triple loop over (point, history slot, level) then the patch cells.

    ``hist`` is ``(n, S, C)``, ``levels`` a list of ``(C, h, w)`` arrays and
    ``p`` pixel positions ``(n, 2)``. Ordering: slot, level, dy, dx.
    """
    n, S, C = hist.shape
    r = (R - 1) // 2
    out = np.zeros((n, S * len(levels) * R * R))
    for i in range(n):
        col = 0
        for s in range(S):
            for lvl, fmap in enumerate(levels):
                scale = stride * 2 ** lvl
                cx, cy = p[i, 0] / scale, p[i, 1] / scale
                for dy in range(-r, r + 1):
                    for dx in range(-r, r + 1):
                        f = bilinear_4nb(fmap, cx + dx, cy + dy)
                        out[i, col] = sum(hist[i, s, c] * f[c] for c in range(C)) / math.sqrt(C)
                        col += 1
    return out


def ncc_pair(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, np.float64).ravel()
    b = np.asarray(b, np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    return float(a @ b / math.sqrt((a @ a) * (b @ b)))


def ncc_brute(template: np.ndarray, search: np.ndarray) -> np.ndarray:
    """NCC of ``template`` at every valid placement inside ``search``."""
    h, w = template.shape
    H, W = search.shape
    out = np.zeros((H - h + 1, W - w + 1))
    for y in range(out.shape[0]):
        for x in range(out.shape[1]):
            out[y, x] = ncc_pair(template, search[y:y + h, x:x + w])
    return out


def compose_affine(A2, A1):
    """``A2 o A1`` for 2x3 matrices, written out longhand."""
    a, b, c = A2[0]
    d, e, f = A2[1]
    g, h, i = A1[0]
    j, k, l = A1[1]
    return np.array([[a * g + b * j, a * h + b * k, a * i + b * l + c],
                     [d * g + e * j, d * h + e * k, d * i + e * l + f]])


def affine_point(A, x, y):
    return A[0][0] * x + A[0][1] * y + A[0][2], A[1][0] * x + A[1][1] * y + A[1][2]


def huber_scalar(r: float, delta: float) -> float:
    a = abs(r)
    return 0.5 * r * r if a <= delta else delta * (a - 0.5 * delta)


def track_loss_loops(pred, gt, valid, gamma_iter, gamma_time, rho) -> float:
    """Loop version of the weighted loss: ``pred`` (T, K+1, n, 2), ``gt`` (n, T, 2)."""
    T, K1, n, _ = pred.shape
    total = 0.0
    for t in range(T):
        nv = sum(bool(valid[i, t]) for i in range(n))
        if nv == 0:
            continue
        for k in range(K1):
            s = 0.0
            for i in range(n):
                if valid[i, t]:
                    s += rho(pred[t, k, i, 0] - gt[i, t, 0]) + rho(pred[t, k, i, 1] - gt[i, t, 1])
            total += gamma_time ** (T - t - 1) * gamma_iter ** (K1 - 1 - k) * s / nv
    return total


def l2_loops(pred, gt, pvalid, gvalid):
    vals = []
    n, T, _ = pred.shape
    for i in range(n):
        for t in range(1, T):
            if pvalid[i, t] and gvalid[i, t]:
                vals.append(math.hypot(pred[i, t, 0] - gt[i, t, 0], pred[i, t, 1] - gt[i, t, 1]))
    m = sum(vals) / len(vals)
    sd = math.sqrt(sum((v - m) ** 2 for v in vals) / len(vals))
    return m, sd
