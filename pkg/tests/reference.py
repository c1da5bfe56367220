"""Independent reference implementations used as test oracles.

Everything here is written as a direct transcription of the definitions
(plain loops, finite differences, exhaustive enumeration) and deliberately
shares no code with the package internals it checks.
"""

from __future__ import annotations

import math

import numpy as np


# --- bilinear resampling ------------------------------------------------------

def naive_rescale(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Per-pixel bilinear resample of (C, H, W) data, edge-clamped."""
    c, in_h, in_w = data.shape
    out = np.zeros((c, out_h, out_w), dtype=np.float64)
    for ch in range(c):
        for oy in range(out_h):
            sy = min(max((oy + 0.5) * (in_h / out_h) - 0.5, 0.0), in_h - 1.0)
            y0 = int(math.floor(sy))
            y1 = min(y0 + 1, in_h - 1)
            fy = sy - y0
            for ox in range(out_w):
                sx = min(max((ox + 0.5) * (in_w / out_w) - 0.5, 0.0), in_w - 1.0)
                x0 = int(math.floor(sx))
                x1 = min(x0 + 1, in_w - 1)
                fx = sx - x0
                top = data[ch, y0, x0] + fx * (data[ch, y0, x1] - data[ch, y0, x0])
                bot = data[ch, y1, x0] + fx * (data[ch, y1, x1] - data[ch, y1, x0])
                out[ch, oy, ox] = top + fy * (bot - top)
    return out


# --- convolution network ------------------------------------------------------

def naive_conv(x: np.ndarray, weights: np.ndarray, biases: np.ndarray,
               stride=(1, 1), padding=(0, 0)) -> np.ndarray:
    """Direct definition of strided, padded cross-correlation, in float64."""
    oc, ic, kh, kw = weights.shape
    sh, sw = stride
    ph, pw = padding
    x = np.pad(np.asarray(x, dtype=np.float64), ((0, 0), (ph, ph), (pw, pw)))
    h, w = x.shape[1], x.shape[2]
    out_h = (h - kh) // sh + 1
    out_w = (w - kw) // sw + 1
    out = np.zeros((oc, out_h, out_w))
    for o in range(oc):
        for oy in range(out_h):
            for ox in range(out_w):
                patch = x[:, oy * sh : oy * sh + kh, ox * sw : ox * sw + kw]
                out[o, oy, ox] = np.sum(patch * weights[o]) + biases[o]
    return out


def naive_maxpool(x: np.ndarray, kernel=(2, 2), stride=(2, 2)) -> np.ndarray:
    kh, kw = kernel
    sh, sw = stride
    c, h, w = x.shape
    out_h = (h - kh) // sh + 1
    out_w = (w - kw) // sw + 1
    out = np.zeros((c, out_h, out_w), dtype=x.dtype)
    for ch in range(c):
        for oy in range(out_h):
            for ox in range(out_w):
                out[ch, oy, ox] = x[ch, oy * sh : oy * sh + kh, ox * sw : ox * sw + kw].max()
    return out


# --- Fisher vector ------------------------------------------------------------

def _gmm_loglik(x_rows, weights, means, sigmas) -> float:
    """Plain-loop log-likelihood of descriptors under a diagonal GMM;
    `sigmas` are standard deviations."""
    total = 0.0
    k = len(weights)
    d = len(means[0])
    for x in x_rows:
        p = 0.0
        for ki in range(k):
            dens = 1.0
            for j in range(d):
                z = (x[j] - means[ki][j]) / sigmas[ki][j]
                dens *= math.exp(-0.5 * z * z) / (math.sqrt(2.0 * math.pi) * sigmas[ki][j])
            p += weights[ki] * dens
        total += math.log(p)
    return total


def fisher_vector_fd(x: np.ndarray, weights: np.ndarray, means: np.ndarray,
                     variances: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Fisher vector via central finite differences of the log-likelihood.

    The mean and deviation gradients are rescaled by the diagonal Fisher
    normalization, yielding [u_1..u_K, v_1..v_K] like the analytic encoder.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    k = len(weights)
    sigmas = np.sqrt(np.asarray(variances, dtype=np.float64))
    means = np.asarray(means, dtype=np.float64)
    u = np.zeros((k, d))
    v = np.zeros((k, d))
    for ki in range(k):
        for j in range(d):
            mp = means.copy()
            mp[ki, j] += h
            mm = means.copy()
            mm[ki, j] -= h
            g_mu = (_gmm_loglik(x, weights, mp, sigmas) - _gmm_loglik(x, weights, mm, sigmas)) / (2 * h)
            u[ki, j] = g_mu * sigmas[ki, j] / (n * math.sqrt(weights[ki]))
            sp = sigmas.copy()
            sp[ki, j] += h
            sm = sigmas.copy()
            sm[ki, j] -= h
            g_sig = (_gmm_loglik(x, weights, means, sp) - _gmm_loglik(x, weights, means, sm)) / (2 * h)
            v[ki, j] = g_sig * sigmas[ki, j] / (n * math.sqrt(2.0 * weights[ki]))
    return np.concatenate([u.ravel(), v.ravel()])


def vlad_naive(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Hard-assignment residual sums, one descriptor at a time."""
    k, d = centers.shape
    out = np.zeros((k, d))
    for row in x:
        dists = [float(np.sum((row - centers[j]) ** 2)) for j in range(k)]
        j = int(np.argmin(dists))
        out[j] += row - centers[j]
    return out.ravel()


# --- SVM ------------------------------------------------------------------------

def svm_exact_objective(x: np.ndarray, y: np.ndarray, c: float) -> float:
    """Optimal value of the augmented-bias hinge-loss SVM on a tiny instance.

    Solves the box-constrained dual max 1'a - 1/2 a'Qa, 0 <= a <= C with
    L-BFGS-B (convex quadratic, analytic gradient), then evaluates the primal.
    """
    from scipy.optimize import minimize

    xa = np.hstack([x, np.ones((x.shape[0], 1))])
    q = (y[:, None] * xa) @ (y[:, None] * xa).T
    n = len(y)

    def f(a):
        return 0.5 * a @ q @ a - a.sum()

    def grad(a):
        return q @ a - 1.0

    best = None
    for start in (np.zeros(n), np.full(n, min(c, 1.0) / 2)):
        res = minimize(f, start, jac=grad, method="L-BFGS-B",
                       bounds=[(0.0, c)] * n,
                       options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-12})
        if best is None or res.fun < best.fun:
            best = res
    w = ((best.x * y)[:, None] * xa).sum(axis=0)
    margins = y * (xa @ w)
    primal = 0.5 * w @ w + c * np.sum(np.maximum(0.0, 1.0 - margins))
    return float(primal)


# --- 11-point average precision --------------------------------------------------

def ap_11pt_bruteforce(scores: np.ndarray, positives: np.ndarray) -> float:
    """AP by explicit enumeration, with exact integer recall comparisons."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    n_pos = int(sum(bool(p) for p in positives))
    tp = 0
    table = []  # (tp_at_rank, precision_at_rank)
    for rank, idx in enumerate(order, start=1):
        if positives[idx]:
            tp += 1
        table.append((tp, tp / rank))
    ap = 0.0
    for tenth in range(11):
        # recall >= tenth/10  <=>  10 * tp >= tenth * n_pos
        reachable = [prec for tp_r, prec in table if 10 * tp_r >= tenth * n_pos]
        ap += max(reachable) if reachable else 0.0
    return ap / 11.0


# --- dense SIFT -------------------------------------------------------------------

def _centered_gradients(gray: np.ndarray):
    h, w = gray.shape
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            if 0 < x < w - 1:
                gx[y, x] = (gray[y, x + 1] - gray[y, x - 1]) / 2.0
            elif x == 0:
                gx[y, x] = gray[y, 1] - gray[y, 0] if w > 1 else 0.0
            else:
                gx[y, x] = gray[y, w - 1] - gray[y, w - 2]
            if 0 < y < h - 1:
                gy[y, x] = (gray[y + 1, x] - gray[y - 1, x]) / 2.0
            elif y == 0:
                gy[y, x] = gray[1, x] - gray[0, x] if h > 1 else 0.0
            else:
                gy[y, x] = gray[h - 1, x] - gray[h - 2, x]
    return gx, gy


def naive_sift_descriptor(gray: np.ndarray, top: int, left: int, support=32,
                          bins=4, orients=8, clamp=0.2) -> np.ndarray:
    """One SIFT descriptor by direct per-pixel accumulation."""
    gx, gy = _centered_gradients(np.asarray(gray, dtype=np.float64))
    cell = support / bins
    sigma = support / 2.0
    ctr = (support - 1) / 2.0
    desc = np.zeros((bins, bins, orients))
    for u in range(support):
        for v in range(support):
            y, x = top + u, left + v
            mag = math.hypot(gx[y, x], gy[y, x])
            if mag == 0.0:
                continue
            ang = math.atan2(gy[y, x], gx[y, x]) % (2.0 * math.pi)
            o = ang / (2.0 * math.pi) * orients
            lo = int(math.floor(o)) % orients
            frac = o - math.floor(o)
            gauss = math.exp(-((u - ctr) ** 2 + (v - ctr) ** 2) / (2.0 * sigma * sigma))
            for bi in range(bins):
                wy = max(0.0, 1.0 - abs(u - (bi * cell + cell / 2 - 0.5)) / cell)
                if wy == 0.0:
                    continue
                for bj in range(bins):
                    wx = max(0.0, 1.0 - abs(v - (bj * cell + cell / 2 - 0.5)) / cell)
                    if wx == 0.0:
                        continue
                    contrib = gauss * wy * wx * mag
                    desc[bi, bj, lo] += contrib * (1.0 - frac)
                    desc[bi, bj, (lo + 1) % orients] += contrib * frac
    flat = desc.ravel()
    norm = np.linalg.norm(flat)
    if norm > 1e-12:
        flat = flat / norm
    flat = np.minimum(flat, clamp)
    norm = np.linalg.norm(flat)
    if norm > 1e-12:
        flat = flat / norm
    return flat
