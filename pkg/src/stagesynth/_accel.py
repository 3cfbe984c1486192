"""Hot per-pixel kernels, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports and ``STAGESYNTH_DISABLE_NUMBA`` is
unset (or "0").  Both paths evaluate the same floating-point operations in the
same order, so the elementwise kernels agree bit-for-bit; only the reductions
in ``weight_excess`` may differ in the last few ulps (pairwise vs sequential
summation).
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    NUMBA_AVAILABLE = False

_flag = os.environ.get("STAGESYNTH_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = NUMBA_AVAILABLE and _flag in ("", "0", "false", "no")

DEGENERATE_GAP = 1e-12


def _njit(fn):
    if not NUMBA_AVAILABLE:
        return None
    return numba.njit(cache=True, nogil=True)(fn)


# --------------------------------------------------------------------------
# mixture posterior step
# --------------------------------------------------------------------------

def mixture_step_numpy(m0, x0_hat, x_back, x_t, coef_x0, coef_xt, sigma, eps):
    x_hat_p = m0 * x0_hat
    x_t_p = m0 * x_t
    x_t_back = (1.0 - m0) * x_t
    mu_p = coef_x0 * x_hat_p + coef_xt * x_t_p
    mu_b = coef_x0 * x_back + coef_xt * x_t_back
    return m0 * mu_p + (1.0 - m0) * mu_b + sigma * eps


def _mixture_step_loops(m0, x0_hat, x_back, x_t, coef_x0, coef_xt, sigma, eps):
    h, w = m0.shape
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            m = m0[i, j]
            xt = x_t[i, j]
            mu_p = coef_x0 * (m * x0_hat[i, j]) + coef_xt * (m * xt)
            mu_b = coef_x0 * x_back[i, j] + coef_xt * ((1.0 - m) * xt)
            out[i, j] = m * mu_p + (1.0 - m) * mu_b + sigma * eps[i, j]
    return out


mixture_step_numba = _njit(_mixture_step_loops)


# --------------------------------------------------------------------------
# two chained blends: y1 = w1*a + (1-w1)*b1 ; y2 = w2*y1 + (1-w2)*b2
# --------------------------------------------------------------------------

def blend_pair_numpy(w1, a, b1, w2, b2):
    y1 = w1 * a + (1.0 - w1) * b1
    y2 = w2 * y1 + (1.0 - w2) * b2
    return y1, y2


def _blend_pair_loops(w1, a, b1, w2, b2):
    h, w = a.shape
    y1 = np.empty((h, w))
    y2 = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            v = w1[i, j] * a[i, j] + (1.0 - w1[i, j]) * b1[i, j]
            y1[i, j] = v
            y2[i, j] = w2[i, j] * v + (1.0 - w2[i, j]) * b2[i, j]
    return y1, y2


blend_pair_numba = _njit(_blend_pair_loops)


# --------------------------------------------------------------------------
# optimal fusion weight, excess error and its deviation bound
# --------------------------------------------------------------------------

def weight_excess_numpy(delta_p, delta_b, w_ema):
    """Return ``(w_star, excess, bound)`` for one error field.

    ``w_star`` is the minimiser of the blended squared error over [0, 1];
    ``bound`` uses the deviation of ``w_ema`` from the unconstrained
    stationary point.
    """
    gap = delta_p - delta_b
    degenerate = np.abs(gap) < DEGENERATE_GAP
    safe_gap = np.where(degenerate, 1.0, gap)
    w_free = np.where(degenerate, w_ema, -delta_b / safe_gap)
    w_star = np.clip(w_free, 0.0, 1.0)
    e_ema = (w_ema * delta_p + (1.0 - w_ema) * delta_b) ** 2
    e_star = (w_star * delta_p + (1.0 - w_star) * delta_b) ** 2
    excess = np.where(degenerate, 0.0, e_ema - e_star)
    dev = w_free - w_ema
    bound = np.where(degenerate, 0.0, gap * gap * dev * dev)
    return w_star, float(excess.sum()), float(bound.sum())


def _weight_excess_loops(delta_p, delta_b, w_ema):
    h, w = delta_p.shape
    w_star = np.empty((h, w))
    excess = 0.0
    bound = 0.0
    for i in range(h):
        for j in range(w):
            dp = delta_p[i, j]
            db = delta_b[i, j]
            we = w_ema[i, j]
            gap = dp - db
            if abs(gap) < DEGENERATE_GAP:
                w_star[i, j] = we
                continue
            w_free = -db / gap
            ws = min(max(w_free, 0.0), 1.0)
            w_star[i, j] = ws
            e_ema = (we * dp + (1.0 - we) * db) ** 2
            e_star = (ws * dp + (1.0 - ws) * db) ** 2
            excess += e_ema - e_star
            dev = w_free - we
            bound += gap * gap * dev * dev
    return w_star, excess, bound


weight_excess_numba = _njit(_weight_excess_loops)


# --------------------------------------------------------------------------
# separable correlation with reflect padding (Gaussian blur)
# --------------------------------------------------------------------------

def separable_blur_numpy(field, taps):
    r = (taps.size - 1) // 2
    h, w = field.shape
    padded = np.pad(field, ((0, 0), (r, r)), mode="symmetric")
    rows = np.zeros((h, w))
    for k in range(taps.size):
        rows = rows + taps[k] * padded[:, k:k + w]
    padded = np.pad(rows, ((r, r), (0, 0)), mode="symmetric")
    out = np.zeros((h, w))
    for k in range(taps.size):
        out = out + taps[k] * padded[k:k + h, :]
    return out


def _reflect(idx, n):
    # symmetric padding: -1 -> 0, n -> n-1; assumes the pad is at most n wide
    if idx < 0:
        return -idx - 1
    if idx >= n:
        return 2 * n - idx - 1
    return idx


_reflect_numba = _njit(_reflect)


def _make_blur_loops(reflect):
    def _separable_blur_loops(field, taps):
        r = (taps.size - 1) // 2
        h, w = field.shape
        rows = np.empty((h, w))
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for k in range(taps.size):
                    acc = acc + taps[k] * field[i, reflect(j + k - r, w)]
                rows[i, j] = acc
        out = np.empty((h, w))
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for k in range(taps.size):
                    acc = acc + taps[k] * rows[reflect(i + k - r, h), j]
                out[i, j] = acc
        return out

    return _separable_blur_loops


separable_blur_numba = (
    _njit(_make_blur_loops(_reflect_numba)) if NUMBA_AVAILABLE else None
)


IMPLEMENTATIONS = {
    "mixture_step": (mixture_step_numpy, mixture_step_numba),
    "blend_pair": (blend_pair_numpy, blend_pair_numba),
    "weight_excess": (weight_excess_numpy, weight_excess_numba),
    "separable_blur": (separable_blur_numpy, separable_blur_numba),
}


def _pick(name):
    np_impl, nb_impl = IMPLEMENTATIONS[name]
    return nb_impl if USE_NUMBA else np_impl


mixture_step = _pick("mixture_step")
blend_pair = _pick("blend_pair")
weight_excess = _pick("weight_excess")
separable_blur = _pick("separable_blur")


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
