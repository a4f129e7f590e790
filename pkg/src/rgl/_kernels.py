"""Compiled inner loops: model terms, the L-geodesic vector field and its
linearization, a Dormand-Prince 5(4) stepper with chart switching, and the
discrete path energy used by the variational oracle.

Every built-in model is a *conformal block* metric in its charts::

    g = exp(2 phi(y, s)) * (dy_1^2 + ... + dy_k^2) + c_line * (dz_1^2 + ...)

with y the first ``k`` coordinates, and a Ricci tensor of the form
``Ric^i_j = m(y, s) * P^i_j`` (P the block projector), so ``R = k * m`` and
``m = d phi / ds``.  That single structure covers flat space, round spheres,
the round-cylinder and the cigar, and gives closed-form Christoffel symbols.
"""

import numba
import numpy as np

FLAT = 0
SPHERE = 1
CYLINDER = 2
CIGAR = 3

MODE_L = 0
MODE_GEODESIC = 1

OK = 0
BLOWUP = 1
MAX_STEPS = 2


@numba.njit(cache=True)
def block_terms(kind, n, k, params, y, s):
    """Return (phi, dphi, hphi, m, dm, R, dR, hR, c_line) at block coords y."""
    a = params[0]
    se = a * s
    dphi = np.zeros(k)
    hphi = np.zeros((k, k))
    dm = np.zeros(k)
    dR = np.zeros(k)
    hR = np.zeros((k, k))
    r2 = 0.0
    for i in range(k):
        r2 += y[i] * y[i]
    c_line = 1.0 / a
    if kind == FLAT:
        return -0.5 * np.log(a), dphi, hphi, 0.0, dm, 0.0, dR, hR, c_line
    if kind == SPHERE or kind == CYLINDER:
        r0 = params[1]
        if kind == SPHERE:
            ns = n
        else:
            ns = 2
        rho2 = r0 * r0 + 2.0 * (ns - 1) * se
        den = 1.0 + r2
        phi = 0.5 * np.log(4.0 * rho2 / a) - np.log(den)
        for i in range(k):
            dphi[i] = -2.0 * y[i] / den
            for j in range(k):
                hphi[i, j] = 4.0 * y[i] * y[j] / (den * den)
            hphi[i, i] -= 2.0 / den
        m = a * (ns - 1) / rho2
        return phi, dphi, hphi, m, dm, ns * m, dR, hR, c_line
    # cigar
    big_a = params[1] * np.exp(-4.0 * se)
    den = big_a + r2
    phi = -0.5 * np.log(a) - 0.5 * np.log(den)
    for i in range(k):
        dphi[i] = -y[i] / den
        dR[i] = -8.0 * a * big_a * y[i] / (den * den)
        dm[i] = 0.5 * dR[i]
        for j in range(k):
            hphi[i, j] = 2.0 * y[i] * y[j] / (den * den)
            hR[i, j] = 32.0 * a * big_a * y[i] * y[j] / (den * den * den)
        hphi[i, i] -= 1.0 / den
        hR[i, i] -= 8.0 * a * big_a / (den * den)
    R = 4.0 * a * big_a / den
    return phi, dphi, hphi, 0.5 * R, dm, R, dR, hR, c_line


@numba.njit(cache=True)
def rhs(kind, n, k, params, t, state, with_jac, mode, s_fixed, out):
    """Vector field of the t = sqrt(s) L-geodesic system (or of ordinary
    geodesics at frozen time ``s_fixed`` when mode == MODE_GEODESIC).

    State layout: x[n], u = dx/dt [n], energy, X[n*n], U[n*n] (row-major,
    X = dx/dv, U = dX/dt).
    """
    if mode == MODE_L:
        s = t * t
        lt = 1.0
    else:
        s = s_fixed
        lt = 0.0
    y = state[:k]
    phi, dphi, hphi, m, dm, R, dR, hR, c_line = block_terms(kind, n, k, params, y, s)
    e2 = np.exp(2.0 * phi)
    em2 = 1.0 / e2
    udp = 0.0
    uu = 0.0
    for i in range(k):
        ui = state[n + i]
        udp += ui * dphi[i]
        uu += ui * ui
    zz = 0.0
    for i in range(k, n):
        zz += state[n + i] * state[n + i]
    for i in range(n):
        out[i] = state[n + i]
        out[n + i] = 0.0
    for i in range(k):
        ui = state[n + i]
        out[n + i] = (-(2.0 * ui * udp - uu * dphi[i])
                      + lt * (2.0 * t * t * em2 * dR[i] - 4.0 * t * m * ui))
    if mode == MODE_L:
        out[2 * n] = 0.5 * (e2 * uu + c_line * zz) + 2.0 * t * t * R
    else:
        out[2 * n] = e2 * uu + c_line * zz
    if not with_jac:
        return
    base_x = 2 * n + 1
    base_u = base_x + n * n
    for i in range(n * n):
        out[base_x + i] = state[base_u + i]
        out[base_u + i] = 0.0
    hu = np.zeros(k)
    for i in range(k):
        for j in range(k):
            hu[i] += hphi[i, j] * state[n + j]
    au = np.zeros((k, k))
    ay = np.zeros((k, k))
    for i in range(k):
        ui = state[n + i]
        for j in range(k):
            uj = state[n + j]
            au[i, j] = -2.0 * ui * dphi[j] + 2.0 * dphi[i] * uj
            ay[i, j] = (-2.0 * ui * hu[j] + uu * hphi[i, j]
                        + lt * (2.0 * t * t * em2 * (hR[i, j] - 2.0 * dR[i] * dphi[j])
                                - 4.0 * t * ui * dm[j]))
        au[i, i] += -2.0 * udp - lt * 4.0 * t * m
    for i in range(k):
        for c in range(n):
            acc = 0.0
            for j in range(k):
                acc += ay[i, j] * state[base_x + j * n + c] + au[i, j] * state[base_u + j * n + c]
            out[base_u + i * n + c] = acc


@numba.njit(cache=True)
def switch_chart(n, k, state, with_jac):
    """Re-express the state through the chart transition y -> S y/|y|^2,
    S flipping the last block coordinate (orientation-preserving involution
    between the two stereographic charts)."""
    y = state[:k].copy()
    u = state[n:n + k].copy()
    r2 = 0.0
    yu = 0.0
    for i in range(k):
        r2 += y[i] * y[i]
        yu += y[i] * u[i]
    r4 = r2 * r2
    d = np.zeros((k, k))
    dd = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            d[i, j] = -2.0 * y[i] * y[j] / r4
            dd[i, j] = (-2.0 * (u[i] * y[j] + y[i] * u[j]) / r4
                        + 8.0 * y[i] * y[j] * yu / (r4 * r2))
        d[i, i] += 1.0 / r2
        dd[i, i] += -2.0 * yu / r4
    for j in range(k):
        d[k - 1, j] = -d[k - 1, j]
        dd[k - 1, j] = -dd[k - 1, j]
    for i in range(k):
        state[i] = y[i] / r2
    state[k - 1] = -state[k - 1]
    for i in range(k):
        acc = 0.0
        for j in range(k):
            acc += d[i, j] * u[j]
        state[n + i] = acc
    if not with_jac:
        return
    base_x = 2 * n + 1
    base_u = base_x + n * n
    xb = np.zeros((k, n))
    ub = np.zeros((k, n))
    for i in range(k):
        for c in range(n):
            xb[i, c] = state[base_x + i * n + c]
            ub[i, c] = state[base_u + i * n + c]
    for i in range(k):
        for c in range(n):
            ax = 0.0
            au = 0.0
            for j in range(k):
                ax += d[i, j] * xb[j, c]
                au += d[i, j] * ub[j, c] + dd[i, j] * xb[j, c]
            state[base_x + i * n + c] = ax
            state[base_u + i * n + c] = au


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0.0],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


@numba.njit(cache=True)
def integrate(kind, n, k, params, has_charts, chart0, y0, t0, knots,
              with_jac, mode, s_fixed, rtol, atol, max_steps):
    """Adaptive DOPRI5 from t0 through every knot (increasing, >= t0).

    Returns (status, states[K, dim], charts[K], accepted_steps).
    """
    dim = y0.shape[0]
    nk = knots.shape[0]
    states = np.full((nk, dim), np.nan)
    charts = np.zeros(nk, dtype=np.int64)
    y = y0.copy()
    chart = chart0
    t = t0
    stages = np.zeros((7, dim))
    ytmp = np.zeros(dim)
    ynew = np.zeros(dim)
    kidx = 0
    while kidx < nk and knots[kidx] <= t0:
        states[kidx] = y
        charts[kidx] = chart
        kidx += 1
    if kidx == nk:
        return OK, states, charts, 0
    span = knots[nk - 1] - t0
    h_free = 0.01 * span
    rhs(kind, n, k, params, t, y, with_jac, mode, s_fixed, stages[0])
    steps = 0
    tries = 0
    while kidx < nk:
        if tries >= max_steps:
            return MAX_STEPS, states, charts, steps
        tries += 1
        target = knots[kidx]
        clipped = t + h_free >= target
        h = target - t if clipped else h_free
        for st in range(1, 7):
            for j in range(dim):
                acc = 0.0
                for q in range(st):
                    acc += _A[st, q] * stages[q, j]
                ytmp[j] = y[j] + h * acc
            rhs(kind, n, k, params, t + _C[st] * h, ytmp, with_jac, mode, s_fixed, stages[st])
        # the last stage is evaluated at the 5th-order solution (FSAL)
        err = 0.0
        finite = True
        for j in range(dim):
            ynew[j] = ytmp[j]
            e = 0.0
            for q in range(7):
                e += _E[q] * stages[q, j]
            e *= h
            sc = atol + rtol * max(abs(y[j]), abs(ynew[j]))
            err += (e / sc) ** 2
            if not np.isfinite(ynew[j]):
                finite = False
        err = np.sqrt(err / dim)
        if not finite or not np.isfinite(err):
            h_free = 0.2 * h
        elif err <= 1.0:
            t = target if clipped else t + h
            y[:] = ynew
            stages[0, :] = stages[6, :]
            steps += 1
            big = 0.0
            for i in range(n):
                big = max(big, abs(y[i]))
            if big > 1e8:
                return BLOWUP, states, charts, steps
            if has_charts:
                r2 = 0.0
                for i in range(k):
                    r2 += y[i] * y[i]
                if r2 > 4.0:
                    switch_chart(n, k, y, with_jac)
                    chart = 1 - chart
                    rhs(kind, n, k, params, t, y, with_jac, mode, s_fixed, stages[0])
            if clipped:
                states[kidx] = y
                charts[kidx] = chart
                kidx += 1
            fac = 0.9 * err ** -0.2 if err > 0.0 else 5.0
            grown = h * min(5.0, max(0.2, fac))
            h_free = max(h_free, grown) if clipped else grown
        else:
            h_free = h * max(0.2, 0.9 * err ** -0.2)
        if h_free < 1e-14 * max(1.0, abs(t)):
            return BLOWUP, states, charts, steps
    return OK, states, charts, steps


@numba.njit(cache=True, parallel=True)
def integrate_batch(kind, n, k, params, has_charts, charts0, y0, t0, knots,
                    with_jac, mode, s_fixed, rtol, atol, max_steps):
    b = y0.shape[0]
    dim = y0.shape[1]
    nk = knots.shape[0]
    status = np.zeros(b, dtype=np.int64)
    states = np.empty((b, nk, dim))
    charts = np.zeros((b, nk), dtype=np.int64)
    for i in numba.prange(b):
        st, sts, chs, _ = integrate(kind, n, k, params, has_charts, charts0[i], y0[i],
                                    t0, knots, with_jac, mode, s_fixed, rtol, atol, max_steps)
        status[i] = st
        states[i] = sts
        charts[i] = chs
    return status, states, charts


# Gauss points on [0, 1] for segment quadrature of the path energy
_GX = np.array([0.5 - 0.5 * np.sqrt(3 / 5), 0.5, 0.5 + 0.5 * np.sqrt(3 / 5)])
_GW = np.array([5 / 18, 8 / 18, 5 / 18])


@numba.njit(cache=True)
def path_energy(kind, n, k, params, pts, tk):
    """L-energy of the piecewise-linear chart curve through ``pts`` at
    t-knots ``tk`` (3-point Gauss per segment) and its gradient w.r.t. pts."""
    npts = pts.shape[0]
    grad = np.zeros((npts, n))
    total = 0.0
    for seg in range(npts - 1):
        dt = tk[seg + 1] - tk[seg]
        w = np.zeros(n)
        for i in range(n):
            w[i] = (pts[seg + 1, i] - pts[seg, i]) / dt
        ww_b = 0.0
        ww_l = 0.0
        for i in range(k):
            ww_b += w[i] * w[i]
        for i in range(k, n):
            ww_l += w[i] * w[i]
        for g in range(3):
            lam = _GX[g]
            tt = tk[seg] + lam * dt
            x = (1.0 - lam) * pts[seg] + lam * pts[seg + 1]
            phi, dphi, hphi, m, dm, R, dR, hR, c_line = block_terms(kind, n, k, params, x[:k], tt * tt)
            e2 = np.exp(2.0 * phi)
            wq = _GW[g] * dt
            total += wq * (0.5 * (e2 * ww_b + c_line * ww_l) + 2.0 * tt * tt * R)
            # d/dx of the integrand at the quadrature point
            for i in range(k):
                gx = e2 * ww_b * dphi[i] + 2.0 * tt * tt * dR[i]
                grad[seg, i] += wq * (1.0 - lam) * gx
                grad[seg + 1, i] += wq * lam * gx
            # d/dw terms
            for i in range(n):
                if i < k:
                    gw = e2 * w[i]
                else:
                    gw = c_line * w[i]
                grad[seg, i] -= wq * gw / dt
                grad[seg + 1, i] += wq * gw / dt
    return total, grad


@numba.njit(cache=True)
def terms_batch(kind, n, k, params, xs, ss):
    """Conformal factor exp(2 phi), R and grad R at many (x, s) pairs."""
    b = xs.shape[0]
    e2 = np.empty(b)
    rr = np.empty(b)
    dr = np.zeros((b, n))
    c_line = 1.0 / params[0]
    for i in range(b):
        phi, dphi, hphi, m, dm, R, dR, hR, c_line = block_terms(kind, n, k, params, xs[i, :k].copy(), ss[i])
        e2[i] = np.exp(2.0 * phi)
        rr[i] = R
        for j in range(k):
            dr[i, j] = dR[j]
    return e2, c_line, rr, dr
