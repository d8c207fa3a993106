# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: energy evaluation, the backward violation DP and
the batched shield simulation.

Every function here has a numpy twin with the same signature in
``_fallback.py``; ``kernels.py`` picks one at import.
"""
import numpy as np

from libc.math cimport exp, fabs, log1p, pow, sqrt

cdef enum:
    IDLE = 0
    NAIVE = 1
    POL = 2
    EXPO = 3
    MON_LOW = 4
    MON_HIGH = 5
    MON_CENTRAL = 6

cdef enum:
    MODE_ENERGY = 0
    MODE_ADAPTIVE = 1
    MODE_NAIVE = 2


cdef inline double _clip01(double v) noexcept nogil:
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


cdef double _zeta(int code, const double* q, double x) noexcept nogil:
    cdef double a, c, al, k, m, v
    if code == IDLE:
        return 0.0
    if code == NAIVE:
        if q[0] < x < q[1]:
            return 0.0
        return 1.0
    if code == POL:
        return _clip01(q[1] * pow(fabs(x - q[0]), q[2]))
    if code == EXPO:
        return _clip01(q[1] * (1.0 - exp(-q[2] * (x - q[0]) * (x - q[0]))))
    if code == MON_LOW:
        a = q[0]; c = q[1]; al = q[2]; k = q[3]; m = q[4]
        if x < a:
            v = c + (1.0 - c) * (1.0 - exp((x - a) / al))
        elif x <= k:
            v = c * pow(1.0 - (x - a) / (k - a), al)
        else:
            v = 1.0 - exp(-pow((x - k) / al, m))
        return _clip01(v)
    if code == MON_HIGH:
        a = q[0]; c = q[1]; al = q[2]; k = q[3]; m = q[4]
        if x < k:
            v = 1.0 - exp(-pow((x - k) / al, m))
        elif x <= a:
            v = c * pow(1.0 - (a - x) / (a - k), al)
        else:
            v = c + (1.0 - c) * (1.0 - exp((a - x) / al))
        return _clip01(v)
    if code == MON_CENTRAL:
        return _clip01(q[1] * pow(fabs(x - q[0]), q[2]))
    return 0.0


cdef inline double _bias(double p, double z, double x, double pivot) noexcept nogil:
    if x <= pivot:
        return p + (1.0 - p) * z
    return p * (1.0 - z)


cdef double _calibrated_pivot(int code, const double* q, double bias, double mu,
                              double lo, double hi) noexcept nogil:
    cdef double e, off, ratio, kappa
    if bias < mu:
        e = (mu - bias) / (1.0 - bias)
    else:
        e = (bias - mu) / bias
    if code == POL:
        off = pow(e / q[1], 1.0 / q[2])
    else:
        ratio = e / q[1]
        if ratio >= 1.0:
            off = hi - lo
        else:
            off = sqrt(-log1p(-ratio) / q[2])
    if bias < mu:
        kappa = mu + off
    else:
        kappa = mu - off
    if kappa < lo:
        kappa = lo
    if kappa > hi:
        kappa = hi
    return kappa


def zeta_array(int code, const double[::1] prm, const double[::1] xs):
    cdef Py_ssize_t i, n = xs.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _zeta(code, &prm[0], xs[i])
    return out


def calibrated_pivot(int code, const double[::1] prm, double bias, double mu, double lo, double hi):
    return _calibrated_pivot(code, &prm[0], bias, mu, lo, hi)


def dp_single(int code, const double[::1] prm, double pivot, double p,
              double s_lo, double s_hi, long long tau, long long T,
              int measures, bint table):
    """Backward sweep over states (t, c) for t = T..1.

    ``measures`` is a bitmask: 1 for the probability measure, 2 for the
    expectation. Returns (P, E, layers) with layers a list of (P, E) value
    arrays per time when ``table`` is set.
    """
    if T <= 0:
        return 0.0, 0.0, ([] if table else None)
    cdef bint want_p = (measures & 1) != 0
    cdef bint want_e = (measures & 2) != 0
    pn_arr = np.zeros(T + 2)
    en_arr = np.zeros(T + 2)
    pc_arr = np.zeros(T + 2)
    ec_arr = np.zeros(T + 2)
    cdef double[::1] pn = pn_arr, en = en_arr, pc = pc_arr, ec = ec_arr
    cdef double[::1] tmp
    cdef long long t, c
    cdef long long tw = tau if tau > 1 else 1
    cdef double x, f, z, g, a, b
    cdef bint viol
    cdef const double* q = &prm[0]
    layers = [] if table else None
    for t in range(T, 0, -1):
        with nogil:
            for c in range(t + 1):
                x = <double>c / <double>t
                viol = t >= tw and (x < s_lo or x > s_hi)
                g = 1.0 if viol else 0.0
                if t == T:
                    pc[c] = g
                    ec[c] = g
                    continue
                if want_e or not viol:
                    z = _zeta(code, q, x)
                    f = _bias(p, z, x, pivot)
                if want_e:
                    ec[c] = g + (f * en[c + 1] + (1.0 - f) * en[c])
                if want_p:
                    if viol:
                        pc[c] = 1.0
                    else:
                        a = pn[c + 1]
                        b = pn[c]
                        pc[c] = a if a == b else f * a + (1.0 - f) * b
        if table:
            layers.append((np.array(pc[:t + 1]), np.array(ec[:t + 1])))
        tmp = pn; pn = pc; pc = tmp
        tmp = en; en = ec; ec = tmp
    if table:
        layers.reverse()
    vp = p * pn[1] + (1.0 - p) * pn[0] if want_p else float("nan")
    ve = p * en[1] + (1.0 - p) * en[0] if want_e else float("nan")
    return vp, ve, layers


def run_single(int mode, int code, const double[::1] prm, double pivot, const double[::1] aux,
               const signed char[:, ::1] x, const double[:, ::1] u, long long t0,
               long long[::1] ones, long long[::1] raw_ones):
    """Advance n independent single-group shields over one chunk of steps.

    ``t0`` is the number of decisions already emitted. ``ones`` and
    ``raw_ones`` carry state between chunks and are updated in place.
    """
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    z_arr = np.empty((n, m), dtype=np.int8)
    y_arr = np.empty((n, m), dtype=np.int8)
    cdef signed char[:, ::1] zo = z_arr, yo = y_arr
    cdef long long cnt, raw, t
    cdef int xi, yi
    cdef double mu, zv, piv, keep, flip, dk, df, qhat
    cdef double lo = aux[0], hi = aux[1], third = aux[2]
    cdef double local[8]
    cdef Py_ssize_t k
    for k in range(8):
        local[k] = prm[k] if k < prm.shape[0] else 0.0
    with nogil:
        for i in range(n):
            cnt = ones[i]
            raw = raw_ones[i]
            for j in range(m):
                t = t0 + j
                xi = x[i, j]
                yi = 0
                if mode == MODE_NAIVE:
                    # aux = (S lower, S upper, burn-in)
                    if <double>(t + 1) >= third:
                        keep = <double>(cnt + xi) / <double>(t + 1)
                        flip = <double>(cnt + 1 - xi) / <double>(t + 1)
                        if keep < lo or keep > hi:
                            if lo <= flip <= hi:
                                yi = 1
                            else:
                                dk = lo - keep if keep < lo else keep - hi
                                df = lo - flip if flip < lo else flip - hi
                                if df < dk:
                                    yi = 1
                else:
                    piv = pivot
                    if mode == MODE_ADAPTIVE:
                        # aux = (domain lower, domain upper, target fixpoint)
                        raw += xi
                        qhat = (1.0 + <double>raw) / (2.0 + <double>(t + 1))
                        piv = _calibrated_pivot(code, local, qhat, third, lo, hi)
                        local[0] = piv
                    if t > 0:
                        mu = <double>cnt / <double>t
                        zv = _zeta(code, local, mu)
                        if mu <= piv:
                            if xi == 0 and u[i, j] < zv:
                                yi = 1
                        elif xi == 1 and u[i, j] < zv:
                            yi = 1
                zo[i, j] = xi ^ yi
                yo[i, j] = yi
                cnt += xi ^ yi
            ones[i] = cnt
            raw_ones[i] = raw
    return z_arr, y_arr


def run_two_group(int code, const double[::1] prm, double pivot,
                  const signed char[:, ::1] g, const signed char[:, ::1] x,
                  const double[:, ::1] u, long long[:, ::1] counts):
    """Two-group analogue of ``run_single``; g is 1 for group A, 0 for B.

    ``counts`` rows hold (N_A, S_A, N_B, S_B) and are updated in place.
    """
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    z_arr = np.empty((n, m), dtype=np.int8)
    y_arr = np.empty((n, m), dtype=np.int8)
    cdef signed char[:, ::1] zo = z_arr, yo = y_arr
    cdef long long na, sa, nb, sb
    cdef int xi, yi, zi, gi, favored
    cdef double mv, zv
    cdef const double* q = &prm[0]
    with nogil:
        for i in range(n):
            na = counts[i, 0]; sa = counts[i, 1]; nb = counts[i, 2]; sb = counts[i, 3]
            for j in range(m):
                xi = x[i, j]
                gi = g[i, j]
                yi = 0
                if na > 0 and nb > 0:
                    mv = <double>sa / <double>na - <double>sb / <double>nb
                    zv = _zeta(code, q, mv)
                    if mv <= pivot:
                        favored = gi
                    else:
                        favored = 1 - gi
                    if xi != favored and u[i, j] < zv:
                        yi = 1
                zi = xi ^ yi
                if gi == 1:
                    na += 1
                    sa += zi
                else:
                    nb += 1
                    sb += zi
                zo[i, j] = zi
                yo[i, j] = yi
            counts[i, 0] = na; counts[i, 1] = sa; counts[i, 2] = nb; counts[i, 3] = sb
    return z_arr, y_arr
