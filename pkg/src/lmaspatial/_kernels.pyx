# cython: language_level=3
"""Compiled numerical kernels (see ``_pykernels`` for the reference versions)."""
from libc.math cimport sqrt, log, log1p, exp, cos, acos, pow, erfc, isfinite, M_PI
from cpython.pycapsule cimport PyCapsule_GetPointer
from numpy.random cimport bitgen_t

import numpy as np

NAME = "cython"

cdef int GAUSSIAN = 0
cdef int POISSON = 1
cdef int PROBIT = 2


def chol_numeric(const Py_ssize_t[::1] Lp, const Py_ssize_t[::1] Li, double[::1] Lx,
                 const Py_ssize_t[::1] row_ptr, const Py_ssize_t[::1] row_col,
                 const Py_ssize_t[::1] row_pos, const double[::1] ref_diag, double tol):
    cdef Py_ssize_t n = Lp.shape[0] - 1
    cdef Py_ssize_t j, a, b, q, r, k, p, p0, e
    cdef Py_ssize_t fail = -1
    cdef double d, ljk
    cdef double[::1] x = np.zeros(n)
    with nogil:
        for j in range(n):
            a = Lp[j]
            b = Lp[j + 1]
            for q in range(a, b):
                x[Li[q]] = Lx[q]
            for r in range(row_ptr[j], row_ptr[j + 1]):
                k = row_col[r]
                p0 = row_pos[r]
                e = Lp[k + 1]
                ljk = Lx[p0]
                for p in range(p0, e):
                    x[Li[p]] -= Lx[p] * ljk
            d = x[j]
            if not (d > tol * ref_diag[j]) or not isfinite(d):
                fail = j
                break
            d = sqrt(d)
            Lx[a] = d
            for q in range(a + 1, b):
                Lx[q] = x[Li[q]] / d
    return fail


def lsolve(const Py_ssize_t[::1] Lp, const Py_ssize_t[::1] Li, const double[::1] Lx, double[::1] x):
    cdef Py_ssize_t n = Lp.shape[0] - 1
    cdef Py_ssize_t j, p
    cdef double xj
    with nogil:
        for j in range(n):
            xj = x[j] / Lx[Lp[j]]
            x[j] = xj
            for p in range(Lp[j] + 1, Lp[j + 1]):
                x[Li[p]] -= Lx[p] * xj


def ltsolve(const Py_ssize_t[::1] Lp, const Py_ssize_t[::1] Li, const double[::1] Lx, double[::1] x):
    cdef Py_ssize_t n = Lp.shape[0] - 1
    cdef Py_ssize_t j, p
    cdef double s
    with nogil:
        for j in range(n - 1, -1, -1):
            s = x[j]
            for p in range(Lp[j] + 1, Lp[j + 1]):
                s -= Lx[p] * x[Li[p]]
            x[j] = s / Lx[Lp[j]]


cdef inline double _log_ndtr(double x) nogil:
    cdef double x2, r
    if x > 0.0:
        return log1p(-0.5 * erfc(x / sqrt(2.0)))
    if x > -20.0:
        return log(0.5 * erfc(-x / sqrt(2.0)))
    # asymptotic series for the far lower tail
    x2 = x * x
    r = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2)
    return -0.5 * x2 - log(-x) - 0.5 * log(2.0 * M_PI) + log(r)


cdef inline double _loglik(int family, double y, double eta, double sigma2) nogil:
    cdef double r
    if family == POISSON:
        return y * eta - exp(eta)
    if family == GAUSSIAN:
        r = y - eta
        return -0.5 * r * r / sigma2
    if y > 0.5:
        return _log_ndtr(eta)
    return _log_ndtr(-eta)


def car_mh_sweep(const Py_ssize_t[::1] order, const Py_ssize_t[::1] c_ptr,
                 const Py_ssize_t[::1] c_ind, const double[::1] c_val, const double[::1] m_diag,
                 const Py_ssize_t[::1] h_ptr, const Py_ssize_t[::1] h_ind, const double[::1] h_val,
                 double[::1] field, double[::1] lin, const double[::1] y, int family, double sigma2,
                 const double[::1] step, const double[::1] znorm, const double[::1] logu,
                 unsigned char[::1] accepted):
    cdef Py_ssize_t t, i, p, q, j
    cdef double cm, old, new, d, lp, lo
    cdef Py_ssize_t n_acc = 0
    with nogil:
        for t in range(order.shape[0]):
            i = order[t]
            cm = 0.0
            for p in range(c_ptr[i], c_ptr[i + 1]):
                cm += c_val[p] * field[c_ind[p]]
            old = field[i]
            new = old + step[i] * znorm[i]
            d = new - old
            lp = -((new - cm) * (new - cm) - (old - cm) * (old - cm)) / (2.0 * m_diag[i])
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


cdef inline double _gig_mode(double lam, double omega) nogil:
    if lam >= 1.0:
        return (sqrt((lam - 1.0) * (lam - 1.0) + omega * omega) + (lam - 1.0)) / omega
    return omega / (sqrt((1.0 - lam) * (1.0 - lam) + omega * omega) + (1.0 - lam))


cdef double _gig_rou_shift(double lam, double omega, bitgen_t *rng) nogil:
    cdef double t = 0.5 * (lam - 1.0)
    cdef double s = 0.25 * omega
    cdef double xm = _gig_mode(lam, omega)
    cdef double nc = t * log(xm) - s * (xm + 1.0 / xm)
    cdef double a = -(2.0 * (lam + 1.0) / omega + xm)
    cdef double b = 2.0 * (lam - 1.0) * xm / omega - 1.0
    cdef double c = xm
    cdef double p = b - a * a / 3.0
    cdef double q = (2.0 * a * a * a) / 27.0 - (a * b) / 3.0 + c
    cdef double fi = acos(-q / (2.0 * sqrt(-(p * p * p) / 27.0)))
    cdef double fak = 2.0 * sqrt(-p / 3.0)
    cdef double y1 = fak * cos(fi / 3.0) - a / 3.0
    cdef double y2 = fak * cos(fi / 3.0 + 4.0 / 3.0 * M_PI) - a / 3.0
    cdef double uplus = (y1 - xm) * exp(t * log(y1) - s * (y1 + 1.0 / y1) - nc)
    cdef double uminus = (y2 - xm) * exp(t * log(y2) - s * (y2 + 1.0 / y2) - nc)
    cdef double U, V, X
    while True:
        U = uminus + rng.next_double(rng.state) * (uplus - uminus)
        V = rng.next_double(rng.state)
        X = U / V + xm
        if X > 0.0 and log(V) <= t * log(X) - s * (X + 1.0 / X) - nc:
            return X


cdef double _gig_rou_noshift(double lam, double omega, bitgen_t *rng) nogil:
    cdef double t = 0.5 * (lam - 1.0)
    cdef double s = 0.25 * omega
    cdef double xm = _gig_mode(lam, omega)
    cdef double nc = t * log(xm) - s * (xm + 1.0 / xm)
    cdef double ym = ((lam + 1.0) + sqrt((lam + 1.0) * (lam + 1.0) + omega * omega)) / omega
    cdef double um = exp(0.5 * (lam + 1.0) * log(ym) - s * (ym + 1.0 / ym) - nc)
    cdef double U, V, X
    while True:
        U = um * rng.next_double(rng.state)
        V = rng.next_double(rng.state)
        X = U / V
        if log(V) <= t * log(X) - s * (X + 1.0 / X) - nc:
            return X


cdef double _gig_concave_hat(double lam, double omega, bitgen_t *rng) nogil:
    cdef double xm = _gig_mode(lam, omega)
    cdef double x0 = omega / (1.0 - lam)
    cdef double k0 = exp((lam - 1.0) * log(xm) - 0.5 * omega * (xm + 1.0 / xm))
    cdef double A0 = k0 * x0
    cdef double k1, A1, k2, A2, Atot, V, X, hx, U, a
    if x0 >= 2.0 / omega:
        k1 = 0.0
        A1 = 0.0
        k2 = pow(x0, lam - 1.0)
        A2 = k2 * 2.0 * exp(-omega * x0 / 2.0) / omega
    else:
        k1 = exp(-omega)
        if lam == 0.0:
            A1 = k1 * log(2.0 / (omega * omega))
        else:
            A1 = k1 / lam * (pow(2.0 / omega, lam) - pow(x0, lam))
        k2 = pow(2.0 / omega, lam - 1.0)
        A2 = k2 * 2.0 * exp(-1.0) / omega
    Atot = A0 + A1 + A2
    while True:
        V = Atot * rng.next_double(rng.state)
        if V <= A0:
            X = x0 * V / A0
            hx = k0
        else:
            V -= A0
            if V <= A1:
                if lam == 0.0:
                    X = omega * exp(exp(omega) * V)
                    hx = k1 / X
                else:
                    X = pow(pow(x0, lam) + lam / k1 * V, 1.0 / lam)
                    hx = k1 * pow(X, lam - 1.0)
            else:
                V -= A1
                a = x0 if x0 > 2.0 / omega else 2.0 / omega
                X = -2.0 / omega * log(exp(-omega / 2.0 * a) - omega / (2.0 * k2) * V)
                hx = k2 * exp(-omega / 2.0 * X)
        U = rng.next_double(rng.state) * hx
        if log(U) <= (lam - 1.0) * log(X) - omega / 2.0 * (X + 1.0 / X):
            return X


cdef inline double _gig_one(double lam, double omega, bitgen_t *rng) nogil:
    if lam > 2.0 or omega > 3.0:
        return _gig_rou_shift(lam, omega, rng)
    if lam >= 1.0 - 2.25 * omega * omega or omega > 0.2:
        return _gig_rou_noshift(lam, omega, rng)
    return _gig_concave_hat(lam, omega, rng)


def gig_standard(const double[::1] lam, const double[::1] omega, double[::1] out, rng):
    cdef Py_ssize_t i
    bit_generator = rng.bit_generator
    cdef bitgen_t *bg = <bitgen_t *> PyCapsule_GetPointer(bit_generator.capsule, "BitGenerator")
    with bit_generator.lock, nogil:
        for i in range(out.shape[0]):
            out[i] = _gig_one(lam[i], omega[i], bg)
