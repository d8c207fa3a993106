"""Pure numpy implementations of the compiled kernels.

Same signatures and semantics as ``_kernels.pyx``. The DP is vectorized
per time layer and the simulation per step across replications.
"""
from __future__ import annotations

import math

import numpy as np

IDLE, NAIVE, POL, EXPO, MON_LOW, MON_HIGH, MON_CENTRAL = range(7)
MODE_ENERGY, MODE_ADAPTIVE, MODE_NAIVE = range(3)


def _zeta(code: int, q, x: np.ndarray) -> np.ndarray:
    # q entries may be scalars or arrays broadcasting against x
    x = np.asarray(x, dtype=np.float64)
    if code == IDLE:
        return np.zeros_like(x)
    if code == NAIVE:
        return np.where((q[0] < x) & (x < q[1]), 0.0, 1.0)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if code in (POL, MON_CENTRAL):
            v = q[1] * np.power(np.abs(x - q[0]), q[2])
        elif code == EXPO:
            d = x - q[0]
            v = q[1] * (1.0 - np.exp(-q[2] * d * d))
        elif code == MON_LOW:
            a, c, al, k, m = q[:5]
            v = np.where(
                x < a,
                c + (1.0 - c) * (1.0 - np.exp((x - a) / al)),
                np.where(
                    x <= k,
                    c * np.power(np.maximum(1.0 - (x - a) / (k - a), 0.0), al),
                    1.0 - np.exp(-np.power((x - k) / al, m)),
                ),
            )
        elif code == MON_HIGH:
            a, c, al, k, m = q[:5]
            v = np.where(
                x < k,
                1.0 - np.exp(-np.power((x - k) / al, m)),
                np.where(
                    x <= a,
                    c * np.power(np.maximum(1.0 - (a - x) / (a - k), 0.0), al),
                    c + (1.0 - c) * (1.0 - np.exp((a - x) / al)),
                ),
            )
        else:
            return np.zeros_like(x)
    return np.clip(v, 0.0, 1.0)


def _bias(p: float, z: np.ndarray, x: np.ndarray, pivot: float) -> np.ndarray:
    return np.where(x <= pivot, p + (1.0 - p) * z, p * (1.0 - z))


def zeta_array(code: int, prm, xs) -> np.ndarray:
    return _zeta(code, np.asarray(prm, dtype=np.float64), np.asarray(xs, dtype=np.float64))


def calibrated_pivot(code: int, prm, bias: float, mu: float, lo: float, hi: float) -> float:
    if bias < mu:
        e = (mu - bias) / (1.0 - bias)
    else:
        e = (bias - mu) / bias
    if code == POL:
        off = math.pow(e / prm[1], 1.0 / prm[2])
    else:
        ratio = e / prm[1]
        off = hi - lo if ratio >= 1.0 else math.sqrt(-math.log1p(-ratio) / prm[2])
    kappa = mu + off if bias < mu else mu - off
    return min(max(kappa, lo), hi)


def _calibrated_pivots(code: int, prm, bias: np.ndarray, mu: float, lo: float, hi: float) -> np.ndarray:
    below = bias < mu
    with np.errstate(divide="ignore", invalid="ignore"):
        e = np.where(below, (mu - bias) / (1.0 - bias), (bias - mu) / bias)
        if code == POL:
            off = np.power(e / prm[1], 1.0 / prm[2])
        else:
            ratio = e / prm[1]
            off = np.where(ratio >= 1.0, hi - lo, np.sqrt(-np.log1p(-np.where(ratio >= 1.0, 0.0, ratio)) / prm[2]))
    kappa = np.where(below, mu + off, mu - off)
    return np.clip(kappa, lo, hi)


def dp_single(code, prm, pivot, p, s_lo, s_hi, tau, T, measures, table):
    if T <= 0:
        return 0.0, 0.0, ([] if table else None)
    prm = np.asarray(prm, dtype=np.float64)
    want_p = bool(measures & 1)
    want_e = bool(measures & 2)
    tw = max(int(tau), 1)
    pn = en = None
    layers = [] if table else None
    for t in range(int(T), 0, -1):
        x = np.arange(t + 1) / float(t)
        viol = (x < s_lo) | (x > s_hi) if t >= tw else np.zeros(t + 1, dtype=bool)
        g = viol.astype(np.float64)
        if t == T:
            pc = g.copy()
            ec = g.copy()
        else:
            f = _bias(p, _zeta(code, prm, x), x, pivot)
            ec = g + (f * en[1:] + (1.0 - f) * en[:-1]) if want_e else np.zeros(t + 1)
            if want_p:
                a, b = pn[1:], pn[:-1]
                pc = np.where(viol, 1.0, np.where(a == b, a, f * a + (1.0 - f) * b))
            else:
                pc = np.zeros(t + 1)
        if table:
            layers.append((pc.copy(), ec.copy()))
        pn, en = pc, ec
    if table:
        layers.reverse()
    vp = p * pn[1] + (1.0 - p) * pn[0] if want_p else float("nan")
    ve = p * en[1] + (1.0 - p) * en[0] if want_e else float("nan")
    return float(vp), float(ve), layers


def run_single(mode, code, prm, pivot, aux, x, u, t0, ones, raw_ones):
    prm = np.asarray(prm, dtype=np.float64)
    n, m = x.shape
    z = np.empty((n, m), dtype=np.int8)
    y = np.empty((n, m), dtype=np.int8)
    lo, hi, third = float(aux[0]), float(aux[1]), float(aux[2])
    cnt = ones.copy()
    raw = raw_ones.copy()
    for j in range(m):
        t = t0 + j
        xj = x[:, j].astype(np.int64)
        if mode == MODE_NAIVE:
            if t + 1 >= third:
                keep = (cnt + xj) / float(t + 1)
                flip = (cnt + 1 - xj) / float(t + 1)
                keep_out = (keep < lo) | (keep > hi)
                flip_in = (lo <= flip) & (flip <= hi)
                dk = np.where(keep < lo, lo - keep, keep - hi)
                df = np.where(flip < lo, lo - flip, flip - hi)
                yj = keep_out & (flip_in | (df < dk))
            else:
                yj = np.zeros(n, dtype=bool)
        else:
            if mode == MODE_ADAPTIVE:
                raw = raw + xj
                qhat = (1.0 + raw) / (2.0 + (t + 1))
                piv = _calibrated_pivots(code, prm, qhat, third, lo, hi)
                q = [piv] + [prm[k] for k in range(1, prm.shape[0])]
            else:
                piv = pivot
                q = prm
            if t > 0:
                mu = cnt / float(t)
                zv = _zeta(code, q, mu)
                below = mu <= piv
                yj = np.where(below, xj == 0, xj == 1) & (u[:, j] < zv)
            else:
                yj = np.zeros(n, dtype=bool)
        yj = yj.astype(np.int64)
        zj = xj ^ yj
        z[:, j] = zj
        y[:, j] = yj
        cnt = cnt + zj
    ones[:] = cnt
    raw_ones[:] = raw
    return z, y


def run_two_group(code, prm, pivot, g, x, u, counts):
    prm = np.asarray(prm, dtype=np.float64)
    n, m = x.shape
    z = np.empty((n, m), dtype=np.int8)
    y = np.empty((n, m), dtype=np.int8)
    na, sa, nb, sb = (counts[:, k].copy() for k in range(4))
    for j in range(m):
        gj = g[:, j].astype(np.int64)
        xj = x[:, j].astype(np.int64)
        defined = (na > 0) & (nb > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            mv = np.where(defined, sa / np.maximum(na, 1) - sb / np.maximum(nb, 1), 0.0)
        zv = _zeta(code, prm, mv)
        favored = np.where(mv <= pivot, gj, 1 - gj)
        yj = (defined & (xj != favored) & (u[:, j] < zv)).astype(np.int64)
        zj = xj ^ yj
        a = gj == 1
        na = na + a
        sa = sa + np.where(a, zj, 0)
        nb = nb + ~a
        sb = sb + np.where(a, 0, zj)
        z[:, j] = zj
        y[:, j] = yj
    counts[:, 0], counts[:, 1], counts[:, 2], counts[:, 3] = na, sa, nb, sb
    return z, y
