"""Pure-Python implementations of the numerical kernels.

These mirror ``_kernels.pyx`` operation for operation and are used whenever
the compiled extension is unavailable (or ``LMASPATIAL_BACKEND=python``).
Index arrays are ``np.intp``; value arrays are contiguous ``float64``.
"""
import math

import numpy as np
from scipy.special import log_ndtr

GAUSSIAN, POISSON, PROBIT = 0, 1, 2

NAME = "python"


def chol_numeric(Lp, Li, Lx, row_ptr, row_col, row_pos, ref_diag, tol):
    """Left-looking sparse Cholesky, in place on ``Lx``.

    On entry ``Lx`` holds the lower triangle of the permuted matrix scattered
    onto the symbolic pattern (zeros at fill positions).  Returns -1 on
    success, otherwise the column whose pivot failed.
    """
    n = Lp.shape[0] - 1
    x = np.zeros(n)
    for j in range(n):
        a = Lp[j]
        b = Lp[j + 1]
        rows = Li[a:b]
        x[rows] = Lx[a:b]
        for r in range(row_ptr[j], row_ptr[j + 1]):
            k = row_col[r]
            p0 = row_pos[r]
            e = Lp[k + 1]
            x[Li[p0:e]] -= Lx[p0:e] * Lx[p0]
        d = x[j]
        if not (d > tol * ref_diag[j]) or not math.isfinite(d):
            return j
        d = math.sqrt(d)
        Lx[a] = d
        Lx[a + 1:b] = x[rows[1:]] / d
    return -1


def lsolve(Lp, Li, Lx, x):
    """Solve ``L y = x`` in place (``L`` lower triangular, CSC, diagonal first)."""
    n = Lp.shape[0] - 1
    for j in range(n):
        a = Lp[j]
        b = Lp[j + 1]
        xj = x[j] / Lx[a]
        x[j] = xj
        if b > a + 1:
            x[Li[a + 1:b]] -= Lx[a + 1:b] * xj


def ltsolve(Lp, Li, Lx, x):
    """Solve ``L^T y = x`` in place."""
    n = Lp.shape[0] - 1
    for j in range(n - 1, -1, -1):
        a = Lp[j]
        b = Lp[j + 1]
        s = x[j]
        if b > a + 1:
            s -= np.dot(Lx[a + 1:b], x[Li[a + 1:b]])
        x[j] = s / Lx[a]


def _loglik(family, y, eta, sigma2):
    if family == POISSON:
        return y * eta - math.exp(eta)
    if family == GAUSSIAN:
        r = y - eta
        return -0.5 * r * r / sigma2
    return float(log_ndtr(eta if y > 0.5 else -eta))


def car_mh_sweep(order, c_ptr, c_ind, c_val, m_diag, h_ptr, h_ind, h_val,
                 field, lin, y, family, sigma2, step, znorm, logu, accepted):
    """One Metropolis pass over ``field`` in ``order`` using CAR conditionals.

    ``c_*`` is the CSR conditional-mean matrix (zero diagonal), ``m_diag``
    the conditional variances, and ``h_*`` the CSC observation map so that
    column ``i`` lists the observations whose linear predictor contains
    ``field[i]``.  ``lin`` is updated alongside accepted moves.
    """
    n_acc = 0
    for i in order:
        cm = 0.0
        for p in range(c_ptr[i], c_ptr[i + 1]):
            cm += c_val[p] * field[c_ind[p]]
        old = field[i]
        new = old + step[i] * znorm[i]
        d = new - old
        lp = -((new - cm) ** 2 - (old - cm) ** 2) / (2.0 * m_diag[i])
        for q in range(h_ptr[i], h_ptr[i + 1]):
            j = h_ind[q]
            lo = lin[j]
            lp += _loglik(family, y[j], lo + h_val[q] * d, sigma2) - _loglik(family, y[j], lo, sigma2)
        if logu[i] < lp:
            field[i] = new
            for q in range(h_ptr[i], h_ptr[i + 1]):
                lin[h_ind[q]] += h_val[q] * d
            accepted[i] = 1
            n_acc += 1
        else:
            accepted[i] = 0
    return n_acc


def _gig_mode(lam, omega):
    if lam >= 1.0:
        return (math.sqrt((lam - 1.0) * (lam - 1.0) + omega * omega) + (lam - 1.0)) / omega
    return omega / (math.sqrt((1.0 - lam) * (1.0 - lam) + omega * omega) + (1.0 - lam))


def _gig_rou_shift(lam, omega, u):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * math.log(xm) - s * (xm + 1.0 / xm)
    a = -(2.0 * (lam + 1.0) / omega + xm)
    b = 2.0 * (lam - 1.0) * xm / omega - 1.0
    c = xm
    p = b - a * a / 3.0
    q = (2.0 * a * a * a) / 27.0 - (a * b) / 3.0 + c
    fi = math.acos(-q / (2.0 * math.sqrt(-(p * p * p) / 27.0)))
    fak = 2.0 * math.sqrt(-p / 3.0)
    y1 = fak * math.cos(fi / 3.0) - a / 3.0
    y2 = fak * math.cos(fi / 3.0 + 4.0 / 3.0 * math.pi) - a / 3.0
    uplus = (y1 - xm) * math.exp(t * math.log(y1) - s * (y1 + 1.0 / y1) - nc)
    uminus = (y2 - xm) * math.exp(t * math.log(y2) - s * (y2 + 1.0 / y2) - nc)
    while True:
        U = uminus + u() * (uplus - uminus)
        V = u()
        X = U / V + xm
        if X > 0.0 and math.log(V) <= t * math.log(X) - s * (X + 1.0 / X) - nc:
            return X


def _gig_rou_noshift(lam, omega, u):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * math.log(xm) - s * (xm + 1.0 / xm)
    ym = ((lam + 1.0) + math.sqrt((lam + 1.0) * (lam + 1.0) + omega * omega)) / omega
    um = math.exp(0.5 * (lam + 1.0) * math.log(ym) - s * (ym + 1.0 / ym) - nc)
    while True:
        U = um * u()
        V = u()
        X = U / V
        if math.log(V) <= t * math.log(X) - s * (X + 1.0 / X) - nc:
            return X


def _gig_concave_hat(lam, omega, u):
    # three-part hat for the non-T-concave region (0 <= lam < 1, small omega)
    xm = _gig_mode(lam, omega)
    x0 = omega / (1.0 - lam)
    k0 = math.exp((lam - 1.0) * math.log(xm) - 0.5 * omega * (xm + 1.0 / xm))
    A0 = k0 * x0
    if x0 >= 2.0 / omega:
        k1 = 0.0
        A1 = 0.0
        k2 = x0 ** (lam - 1.0)
        A2 = k2 * 2.0 * math.exp(-omega * x0 / 2.0) / omega
    else:
        k1 = math.exp(-omega)
        if lam == 0.0:
            A1 = k1 * math.log(2.0 / (omega * omega))
        else:
            A1 = k1 / lam * ((2.0 / omega) ** lam - x0 ** lam)
        k2 = (2.0 / omega) ** (lam - 1.0)
        A2 = k2 * 2.0 * math.exp(-1.0) / omega
    Atot = A0 + A1 + A2
    while True:
        V = Atot * u()
        if V <= A0:
            X = x0 * V / A0
            hx = k0
        else:
            V -= A0
            if V <= A1:
                if lam == 0.0:
                    X = omega * math.exp(math.exp(omega) * V)
                    hx = k1 / X
                else:
                    X = (x0 ** lam + lam / k1 * V) ** (1.0 / lam)
                    hx = k1 * X ** (lam - 1.0)
            else:
                V -= A1
                a = x0 if x0 > 2.0 / omega else 2.0 / omega
                X = -2.0 / omega * math.log(math.exp(-omega / 2.0 * a) - omega / (2.0 * k2) * V)
                hx = k2 * math.exp(-omega / 2.0 * X)
        U = u() * hx
        if math.log(U) <= (lam - 1.0) * math.log(X) - omega / 2.0 * (X + 1.0 / X):
            return X


def gig_standard_one(lam, omega, u):
    if lam > 2.0 or omega > 3.0:
        return _gig_rou_shift(lam, omega, u)
    if lam >= 1.0 - 2.25 * omega * omega or omega > 0.2:
        return _gig_rou_noshift(lam, omega, u)
    return _gig_concave_hat(lam, omega, u)


def gig_standard(lam, omega, out, rng):
    """Fill ``out`` with draws of density ``x^(lam-1) exp(-omega (x + 1/x) / 2)``.

    Requires ``lam >= 0`` and ``omega > 0`` elementwise.  Uniforms are taken
    one at a time from ``rng.random`` so the stream matches the compiled kernel.
    """
    u = rng.random
    for i in range(out.shape[0]):
        out[i] = gig_standard_one(lam[i], omega[i], u)
