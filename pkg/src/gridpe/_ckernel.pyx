# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-cell sub-equilibrium solver.

Mirrors ``_kernel_py`` one technology at a time.  Unknowns are log land rent
(and log water price for irrigated practices) relative to the benchmark.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, fabs, fmin, fmax

cnp.import_array()

DEF U_MIN = -50.0
DEF U_MAX = 50.0
DEF TOL_STOP = 1e-14
DEF TOL_OK = 1e-10
DEF CD_EPS = 1e-9
DEF MAX_NEWTON_2D = 50


cdef inline double lnces(double th, double lth, double lth1, double a, double b, double sig) nogil:
    """log of the CES unit cost; ``lth``, ``lth1`` are log(th), log(1 - th)."""
    cdef double k, x, y
    if fabs(sig - 1.0) < CD_EPS:
        return th * a + (1.0 - th) * b
    k = 1.0 - sig
    x = lth + k * a
    y = lth1 + k * b
    return (fmax(x, y) + log1p(exp(-fabs(x - y)))) / k


cdef inline double share1(double th, double a, double lc, double sig) nogil:
    if fabs(sig - 1.0) < CD_EPS:
        return th
    return th * exp((1.0 - sig) * (a - lc))


cdef struct Tech:
    double th_f, th_lw, th_l, s_t, s_m, s_b, e_l, e_w, cap_l, cap_w
    double lf_f, lf_a, lf_lw, lf_lw1, lf_l, lf_l1       # logs of the nest shares
    double ltau, lp, lx, lf


cdef inline double rf_f(Tech* t, double u, double* fp) nogil:
    cdef double lca = lnces(t.th_l, t.lf_l, t.lf_l1, u, t.lx, t.s_b)
    cdef double lc = lnces(1.0 - t.th_f, t.lf_a, t.lf_f, lca, t.lf, t.s_t)
    fp[0] = share1(1.0 - t.th_f, lca, lc, t.s_t) * share1(t.th_l, u, lca, t.s_b)
    return lc - t.ltau


cdef inline double irr_f1(Tech* t, double u, double v, double* j11, double* j12) nogil:
    cdef double lclw = lnces(t.th_l, t.lf_l, t.lf_l1, u, v, t.s_b)
    cdef double lca = lnces(t.th_lw, t.lf_lw, t.lf_lw1, lclw, t.lx, t.s_m)
    cdef double lc = lnces(1.0 - t.th_f, t.lf_a, t.lf_f, lca, t.lf, t.s_t)
    cdef double sa = share1(1.0 - t.th_f, lca, lc, t.s_t) * share1(t.th_lw, lclw, lca, t.s_m)
    cdef double sl = share1(t.th_l, u, lclw, t.s_b)
    j11[0] = sa * sl
    j12[0] = sa * (1.0 - sl)
    return lc - t.ltau


cdef inline double irr_f2(Tech* t, double u, double v, double* j21, double* j22) nogil:
    cdef double al = t.e_l * (u - t.lp)
    cdef double aw = t.e_w * (v - t.lp)
    j21[0] = t.s_b + (t.e_l if al < t.cap_l else 0.0)
    j22[0] = -(t.s_b + (t.e_w if aw < t.cap_w else 0.0))
    return fmin(al, t.cap_l) - fmin(aw, t.cap_w) + t.s_b * (u - v)


cdef inline double v_of_u(Tech* t, double u) nogil:
    """Water price clearing the land/water balance for a given rent."""
    cdef double h = fmin(t.e_l * (u - t.lp), t.cap_l) + t.s_b * u
    cdef double v = (h + t.e_w * t.lp) / (t.e_w + t.s_b)
    if t.e_w * (v - t.lp) <= t.cap_w:
        return v
    return (h - t.cap_w) / t.s_b


cdef inline double irr_g(Tech* t, double u, double* gp) nogil:
    cdef double j11, j12, j21, j22
    cdef double v = v_of_u(t, u)
    cdef double f = irr_f1(t, u, v, &j11, &j12)
    irr_f2(t, u, v, &j21, &j22)
    gp[0] = j11 + j12 * (-j21 / j22)
    return f


cdef int solve_1d(Tech* t, bint irrigated, double u0, double* u_out, int max_iter) nogil:
    """Safeguarded Newton on a monotone increasing residual.  Returns iterations
    (negative on failure to bracket: -1 shutdown, -2 unbounded)."""
    cdef double lo = U_MIN, hi = U_MAX, u, f, fp, un
    cdef int it
    f = irr_g(t, lo, &fp) if irrigated else rf_f(t, lo, &fp)
    if f >= 0.0:
        u_out[0] = lo
        return -1
    f = irr_g(t, hi, &fp) if irrigated else rf_f(t, hi, &fp)
    if f <= 0.0:
        u_out[0] = hi
        return -2
    u = fmin(fmax(u0, lo + 1.0), hi - 1.0)
    for it in range(1, max_iter + 1):
        f = irr_g(t, u, &fp) if irrigated else rf_f(t, u, &fp)
        if fabs(f) <= TOL_STOP:
            break
        if f > 0.0:
            hi = u
        else:
            lo = u
        un = u - f / fp if fp > 0.0 else 0.5 * (lo + hi)
        if not (lo < un < hi):
            un = 0.5 * (lo + hi)
        if fabs(un - u) <= 1e-15 * (1.0 + fabs(u)):
            u = un
            break
        u = un
    u_out[0] = u
    return it


cdef int solve_2d(Tech* t, double u0, double* u_out, double* v_out, int max_iter) nogil:
    """Damped Newton on (log rent, log water price); 0 iterations if it stalls."""
    cdef double u = u0, v = v_of_u(t, u0), f1, f2, j11, j12, j21, j22
    cdef double det, du, dv, norm, tu, tv, g1, g2, s, step
    cdef int it, k
    cdef bint accepted
    for it in range(1, max_iter + 1):
        f1 = irr_f1(t, u, v, &j11, &j12)
        f2 = irr_f2(t, u, v, &j21, &j22)
        norm = fmax(fabs(f1), fabs(f2))
        if norm <= TOL_STOP:
            u_out[0] = u
            v_out[0] = v
            return it
        det = j11 * j22 - j12 * j21
        if det == 0.0:
            return 0
        du = (-f1 * j22 + f2 * j12) / det
        dv = (-f2 * j11 + f1 * j21) / det
        s = 1.0
        accepted = False
        for k in range(31):
            tu = u + s * du
            tv = v + s * dv
            if U_MIN < tu < U_MAX and U_MIN < tv < U_MAX:
                g1 = irr_f1(t, tu, tv, &j11, &j12)
                g2 = irr_f2(t, tu, tv, &j21, &j22)
                if fmax(fabs(g1), fabs(g2)) < norm:
                    accepted = True
                    break
            s *= 0.5
        if not accepted:
            u_out[0] = u
            v_out[0] = v
            return 0 if norm > TOL_OK else it
        step = fmax(fabs(tu - u), fabs(tv - v))
        u = tu
        v = tv
        if step <= 1e-15 * (1.0 + fabs(u) + fabs(v)):
            break
    u_out[0] = u
    v_out[0] = v
    f1 = irr_f1(t, u, v, &j11, &j12)
    f2 = irr_f2(t, u, v, &j21, &j22)
    return it if fmax(fabs(f1), fabs(f2)) <= TOL_OK else 0


def solve_cells(params, double ltau, double lp, double lx, double lf, int max_iter=200):
    cdef cnp.int8_t[::1] irr = params[0]
    cdef double[::1] th_f = params[1], th_lw = params[2], th_l = params[3]
    cdef double[::1] s_t = params[4], s_m = params[5], s_b = params[6]
    cdef double[::1] e_l = params[7], e_w = params[8], cap_l = params[9], cap_w = params[10]
    cdef Py_ssize_t n = th_f.shape[0], i
    u_arr = np.empty(n)
    v_arr = np.zeros(n)
    st_arr = np.zeros(n, dtype=np.int8)
    it_arr = np.zeros(n, dtype=np.int32)
    cdef double[::1] u_o = u_arr, v_o = v_arr
    cdef cnp.int8_t[::1] st = st_arr
    cdef cnp.int32_t[::1] its = it_arr
    cdef Tech t
    cdef double u0, u, v, fp, f1, f2, j11, j12, j21, j22, k, d, ta
    cdef int it
    with nogil:
        for i in range(n):
            t.th_f = th_f[i]; t.th_lw = th_lw[i]; t.th_l = th_l[i]
            t.s_t = s_t[i]; t.s_m = s_m[i]; t.s_b = s_b[i]
            t.e_l = e_l[i]; t.e_w = e_w[i]; t.cap_l = cap_l[i]; t.cap_w = cap_w[i]
            t.ltau = ltau; t.lp = lp; t.lx = lx; t.lf = lf
            t.lf_f = log(t.th_f); t.lf_a = log1p(-t.th_f)
            t.lf_lw = log(t.th_lw); t.lf_lw1 = log1p(-t.th_lw)
            t.lf_l = log(t.th_l); t.lf_l1 = log1p(-t.th_l)
            ta = 1.0 - t.th_f
            if irr[i]:
                k = (t.e_l + t.s_b) / (t.e_w + t.s_b)
                d = -(t.e_l - t.e_w) * lp / (t.e_w + t.s_b)
                u0 = (ltau - t.th_f * lf - ta * (1.0 - t.th_lw) * lx
                      - ta * t.th_lw * (1.0 - t.th_l) * d) / (ta * t.th_lw * (t.th_l + (1.0 - t.th_l) * k))
                u0 = fmin(fmax(u0, U_MIN + 1.0), U_MAX - 1.0)
                it = solve_2d(&t, u0, &u, &v, MAX_NEWTON_2D)
                if it == 0:
                    it = solve_1d(&t, True, u0, &u, max_iter)
                    v = v_of_u(&t, u)
                    if it > 0:
                        it += MAX_NEWTON_2D
                if it == -1:
                    st[i] = 1
                elif it == -2:
                    st[i] = 2
                else:
                    f1 = irr_f1(&t, u, v, &j11, &j12)
                    f2 = irr_f2(&t, u, v, &j21, &j22)
                    st[i] = 0 if fmax(fabs(f1), fabs(f2)) <= TOL_OK else 2
                u_o[i] = u
                v_o[i] = v
            else:
                u0 = (ltau - t.th_f * lf - ta * (1.0 - t.th_l) * lx) / (ta * t.th_l)
                it = solve_1d(&t, False, u0, &u, max_iter)
                if it == -1:
                    st[i] = 1
                elif it == -2:
                    st[i] = 2
                else:
                    f1 = rf_f(&t, u, &fp)
                    st[i] = 0 if fabs(f1) <= TOL_OK else 2
                u_o[i] = u
            its[i] = it if it > 0 else 0
    return u_arr, v_arr, st_arr, it_arr
