"""Pure numpy implementation of the per-cell sub-equilibrium solve.

Same algorithm as the compiled ``_ckernel``, vectorized across technologies:
every technology iterates in lock step and drops out of the active set once
it converges.

Rainfed practices solve zero profit for the log land rent u with a
safeguarded Newton iteration (bisection whenever the Newton step leaves the
current bracket).  Irrigated practices solve zero profit jointly with the
land/water balance for (u, v) by damped Newton; anything that stalls is
finished by the safeguarded 1-D iteration on u with v eliminated.
"""
import numpy as np

U_MIN, U_MAX = -50.0, 50.0
TOL_STOP = 1e-14
TOL_OK = 1e-10
CD_EPS = 1e-9
MAX_NEWTON_2D = 50


def _lnces(th, a, b, sig):
    cd = np.abs(sig - 1.0) < CD_EPS
    k = np.where(cd, 1.0, 1.0 - sig)
    x = np.log(th) + k * a
    y = np.log1p(-th) + k * b
    return np.where(cd, th * a + (1.0 - th) * b, np.logaddexp(x, y) / k)


def _share1(th, a, lc, sig):
    return np.where(np.abs(sig - 1.0) < CD_EPS, th, th * np.exp((1.0 - sig) * (a - lc)))


class _Problem:
    """Parameters of the subset of technologies being solved."""

    def __init__(self, params, idx, ltau, lp, lx, lf):
        (_, th_f, th_lw, th_l, s_t, s_m, s_b, e_l, e_w, cap_l, cap_w) = params
        self.th_f, self.th_lw, self.th_l = th_f[idx], th_lw[idx], th_l[idx]
        self.s_t, self.s_m, self.s_b = s_t[idx], s_m[idx], s_b[idx]
        self.e_l, self.e_w, self.cap_l, self.cap_w = e_l[idx], e_w[idx], cap_l[idx], cap_w[idx]
        self.ltau, self.lp, self.lx, self.lf = ltau, lp, lx, lf

    def take(self, sel):
        sub = object.__new__(_Problem)
        for k, v in vars(self).items():
            setattr(sub, k, v[sel] if isinstance(v, np.ndarray) else v)
        return sub

    # rainfed residual and derivative
    def rf(self, u):
        lca = _lnces(self.th_l, u, self.lx, self.s_b)
        lc = _lnces(1.0 - self.th_f, lca, self.lf, self.s_t)
        fp = _share1(1.0 - self.th_f, lca, lc, self.s_t) * _share1(self.th_l, u, lca, self.s_b)
        return lc - self.ltau, fp

    # irrigated
    def f1(self, u, v):
        lclw = _lnces(self.th_l, u, v, self.s_b)
        lca = _lnces(self.th_lw, lclw, self.lx, self.s_m)
        lc = _lnces(1.0 - self.th_f, lca, self.lf, self.s_t)
        sa = _share1(1.0 - self.th_f, lca, lc, self.s_t) * _share1(self.th_lw, lclw, lca, self.s_m)
        sl = _share1(self.th_l, u, lclw, self.s_b)
        return lc - self.ltau, sa * sl, sa * (1.0 - sl)

    def f2(self, u, v):
        al = self.e_l * (u - self.lp)
        aw = self.e_w * (v - self.lp)
        j21 = self.s_b + np.where(al < self.cap_l, self.e_l, 0.0)
        j22 = -(self.s_b + np.where(aw < self.cap_w, self.e_w, 0.0))
        return np.minimum(al, self.cap_l) - np.minimum(aw, self.cap_w) + self.s_b * (u - v), j21, j22

    def v_of_u(self, u):
        h = np.minimum(self.e_l * (u - self.lp), self.cap_l) + self.s_b * u
        v = (h + self.e_w * self.lp) / (self.e_w + self.s_b)
        return np.where(self.e_w * (v - self.lp) <= self.cap_w, v, (h - self.cap_w) / self.s_b)

    def g(self, u):
        v = self.v_of_u(u)
        f, j11, j12 = self.f1(u, v)
        _, j21, j22 = self.f2(u, v)
        return f, j11 + j12 * (-j21 / j22)


def _solve_1d(prob, resid, u0, max_iter):
    """Returns (u, iterations) with iterations -1 (shutdown) or -2 (unbounded)."""
    n = u0.shape[0]
    f_lo, _ = resid(prob, np.full(n, U_MIN))
    f_hi, _ = resid(prob, np.full(n, U_MAX))
    its = np.zeros(n, dtype=np.int32)
    shut = f_lo >= 0.0
    unbounded = ~shut & (f_hi <= 0.0)
    u = np.clip(u0, U_MIN + 1.0, U_MAX - 1.0)
    u[shut] = U_MIN
    u[unbounded] = U_MAX
    lo = np.full(n, U_MIN)
    hi = np.full(n, U_MAX)
    active = ~(shut | unbounded)
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        sub = prob.take(idx)
        ui = u[idx]
        f, fp = resid(sub, ui)
        its[idx] = it
        done = np.abs(f) <= TOL_STOP
        hi[idx] = np.where(f > 0.0, ui, hi[idx])
        lo[idx] = np.where(f > 0.0, lo[idx], ui)
        with np.errstate(divide="ignore", invalid="ignore"):
            un = np.where(fp > 0.0, ui - f / fp, 0.5 * (lo[idx] + hi[idx]))
        outside = ~((lo[idx] < un) & (un < hi[idx]))
        un = np.where(outside, 0.5 * (lo[idx] + hi[idx]), un)
        tiny = np.abs(un - ui) <= 1e-15 * (1.0 + np.abs(ui))
        u[idx] = np.where(done, ui, un)
        active[idx[done | tiny]] = False
    its[shut] = -1
    its[unbounded] = -2
    return u, its


def _rf_resid(prob, u):
    return prob.rf(u)


def _irr_resid(prob, u):
    return prob.g(u)


def _solve_2d(prob, u0, max_iter):
    """Damped Newton; returns (u, v, iterations) with 0 iterations where it stalled."""
    n = u0.shape[0]
    u = u0.copy()
    v = prob.v_of_u(u)
    its = np.zeros(n, dtype=np.int32)
    ok = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        sub = prob.take(idx)
        ui, vi = u[idx], v[idx]
        f1, j11, j12 = sub.f1(ui, vi)
        f2, j21, j22 = sub.f2(ui, vi)
        norm = np.maximum(np.abs(f1), np.abs(f2))
        its[idx] = it
        conv = norm <= TOL_STOP
        det = j11 * j22 - j12 * j21
        with np.errstate(divide="ignore", invalid="ignore"):
            du = (-f1 * j22 + f2 * j12) / det
            dv = (-f2 * j11 + f1 * j21) / det
        s = np.ones(idx.size)
        accepted = np.zeros(idx.size, dtype=bool)
        pending = ~conv & (det != 0.0)
        tu, tv = ui.copy(), vi.copy()
        for _ in range(31):
            if not pending.any():
                break
            p = np.flatnonzero(pending)
            cu = ui[p] + s[p] * du[p]
            cv = vi[p] + s[p] * dv[p]
            inside = (U_MIN < cu) & (cu < U_MAX) & (U_MIN < cv) & (cv < U_MAX)
            psub = sub.take(p)
            with np.errstate(invalid="ignore", over="ignore"):
                g1, _, _ = psub.f1(cu, cv)
                g2, _, _ = psub.f2(cu, cv)
            good = inside & (np.maximum(np.abs(g1), np.abs(g2)) < norm[p])
            tu[p[good]] = cu[good]
            tv[p[good]] = cv[good]
            accepted[p[good]] = True
            pending[p[good]] = False
            s[p[~good]] *= 0.5
        stalled = ~conv & ~accepted
        ok[idx[conv]] = True
        ok[idx[stalled]] = norm[stalled] <= TOL_OK
        step = np.maximum(np.abs(tu - ui), np.abs(tv - vi))
        small = accepted & (step <= 1e-15 * (1.0 + np.abs(tu) + np.abs(tv)))
        u[idx] = np.where(accepted, tu, ui)
        v[idx] = np.where(accepted, tv, vi)
        active[idx[conv | stalled | small]] = False
        if small.any():
            # a tiny accepted step counts as converged only if the residual is small
            sidx = idx[small]
            g1, _, _ = prob.take(sidx).f1(u[sidx], v[sidx])
            g2, _, _ = prob.take(sidx).f2(u[sidx], v[sidx])
            ok[sidx] = np.maximum(np.abs(g1), np.abs(g2)) <= TOL_OK
    rest = np.flatnonzero(active)
    if rest.size:
        g1, _, _ = prob.take(rest).f1(u[rest], v[rest])
        g2, _, _ = prob.take(rest).f2(u[rest], v[rest])
        ok[rest] = np.maximum(np.abs(g1), np.abs(g2)) <= TOL_OK
    its[~ok] = 0
    return u, v, its


def solve_cells(params, ltau, lp, lx, lf, max_iter=200):
    irr = params[0].astype(bool)
    n = irr.shape[0]
    u = np.empty(n)
    v = np.zeros(n)
    status = np.zeros(n, dtype=np.int8)
    iters = np.zeros(n, dtype=np.int32)

    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        rf = np.flatnonzero(~irr)
        if rf.size:
            p = _Problem(params, rf, ltau, lp, lx, lf)
            ta = 1.0 - p.th_f
            u0 = (ltau - p.th_f * lf - ta * (1.0 - p.th_l) * lx) / (ta * p.th_l)
            ur, it = _solve_1d(p, _rf_resid, u0, max_iter)
            f, _ = p.rf(ur)
            st = np.where(it == -1, 1, np.where((it == -2) | ~(np.abs(f) <= TOL_OK), 2, 0))
            u[rf], status[rf], iters[rf] = ur, st, np.maximum(it, 0)

        ir = np.flatnonzero(irr)
        if ir.size:
            p = _Problem(params, ir, ltau, lp, lx, lf)
            ta = 1.0 - p.th_f
            k = (p.e_l + p.s_b) / (p.e_w + p.s_b)
            d = -(p.e_l - p.e_w) * lp / (p.e_w + p.s_b)
            u0 = (ltau - p.th_f * lf - ta * (1.0 - p.th_lw) * lx - ta * p.th_lw * (1.0 - p.th_l) * d) \
                / (ta * p.th_lw * (p.th_l + (1.0 - p.th_l) * k))
            u0 = np.clip(u0, U_MIN + 1.0, U_MAX - 1.0)
            ui, vi, it = _solve_2d(p, u0, MAX_NEWTON_2D)
            stalled = np.flatnonzero(it == 0)
            if stalled.size:
                sp = p.take(stalled)
                us, its = _solve_1d(sp, _irr_resid, u0[stalled], max_iter)
                ui[stalled] = us
                vi[stalled] = sp.v_of_u(us)
                it[stalled] = np.where(its > 0, its + MAX_NEWTON_2D, its)
            f1, _, _ = p.f1(ui, vi)
            f2, _, _ = p.f2(ui, vi)
            bad = ~(np.maximum(np.abs(f1), np.abs(f2)) <= TOL_OK)
            st = np.where(it == -1, 1, np.where((it == -2) | bad, 2, 0))
            u[ir], v[ir], status[ir], iters[ir] = ui, vi, st, np.maximum(it, 0)
    return u, v, status, iters
