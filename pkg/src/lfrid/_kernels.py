"""Numba-compiled rollout kernels used by the trainer.

The forward kernel simulates the interconnection over the whole record,
storing the tape (states, scheduling values, latent solves, hidden
activations) needed by the backward kernel, which accumulates exact
reverse-mode gradients of the mean-squared output error with respect to
every plant block, the scheduling-net parameters, and the initial state.

Matrix sizes are tiny (tens at most), so everything uses explicit loops; a
per-step dense solve with partial pivoting is recompiled inline.

Hidden layers are passed as padded 3-D arrays (layer, row, col) with a
`widths` vector giving the true sizes, so nets of any depth share one
compiled signature.

Status codes: 0 = ok, 1 = singular latent solve, 2 = divergence.
"""

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_SINGULAR = 1
STATUS_DIVERGED = 2

_DIVERGE_LIMIT = 1e100


@njit(cache=True, nogil=True, inline="always")
def _solve_destructive(M, rhs):
    """Gaussian elimination with partial pivoting; M and rhs are destroyed,
    the solution ends up in rhs.  Returns False when a pivot falls below
    1e-12 * max|M|."""
    n = M.shape[0]
    tol = 0.0
    for i in range(n):
        for j in range(n):
            a = abs(M[i, j])
            if a > tol:
                tol = a
    tol *= 1e-12
    for j in range(n):
        piv = j
        best = abs(M[j, j])
        for i in range(j + 1, n):
            a = abs(M[i, j])
            if a > best:
                best = a
                piv = i
        if best <= tol:
            return False
        if piv != j:
            for c in range(j, n):
                t = M[j, c]
                M[j, c] = M[piv, c]
                M[piv, c] = t
            t = rhs[j]
            rhs[j] = rhs[piv]
            rhs[piv] = t
        for i in range(j + 1, n):
            f = M[i, j] / M[j, j]
            M[i, j] = f
            for c in range(j + 1, n):
                M[i, c] -= f * M[j, c]
            rhs[i] -= f * rhs[j]
    for j in range(n - 1, -1, -1):
        s = rhs[j]
        for c in range(j + 1, n):
            s -= M[j, c] * rhs[c]
        rhs[j] = s / M[j, j]
    return True


@njit(cache=True, nogil=True)
def rollout_forward(Ax, Bw, Bu, Cz, Dzw, Dzu, Cy, Dyw, Dyu,
                    bmap, use_net,
                    HW, Hb, widths, Whead, Wx, Wu, Wd, bb,
                    p_ext, u, d, y, x0,
                    X, P, Z, H, Yh):
    """Simulate the rollout, fill the tape, and return (status, bad_step,
    mean-squared output error)."""
    N = u.shape[0]
    n_x = Ax.shape[0]
    n_w = Dzw.shape[0]
    n_u = u.shape[1]
    n_d = d.shape[1]
    n_y = Cy.shape[0]
    n_p = P.shape[1]
    L = HW.shape[0]

    M = np.empty((n_w, n_w))
    rhs = np.empty(n_w)
    inp = np.empty(n_x + n_u + n_d)
    a = np.empty(n_p)
    loss = 0.0

    for i in range(n_x):
        X[0, i] = x0[i]

    for k in range(N):
        # scheduling value
        if use_net:
            for i in range(n_x):
                inp[i] = X[k, i]
            for i in range(n_u):
                inp[n_x + i] = u[k, i]
            for i in range(n_d):
                inp[n_x + n_u + i] = d[k, i]
            for i in range(n_p):
                s = bb[i]
                for j in range(n_x):
                    s += Wx[i, j] * X[k, j]
                for j in range(n_u):
                    s += Wu[i, j] * u[k, j]
                for j in range(n_d):
                    s += Wd[i, j] * d[k, j]
                a[i] = s
            if L > 0:
                w_prev = widths[0]
                for l in range(L):
                    w_cur = widths[l + 1]
                    for i in range(w_cur):
                        s = Hb[l, i]
                        if l == 0:
                            for j in range(w_prev):
                                s += HW[l, i, j] * inp[j]
                        else:
                            for j in range(w_prev):
                                s += HW[l, i, j] * H[l - 1, k, j]
                        H[l, k, i] = np.tanh(s)
                    w_prev = w_cur
                for i in range(n_p):
                    s = a[i]
                    for j in range(widths[L]):
                        s += Whead[i, j] * H[L - 1, k, j]
                    a[i] = s
            for i in range(n_p):
                P[k, i] = np.tanh(a[i])
        else:
            for i in range(n_p):
                P[k, i] = p_ext[k, i]

        # latent solve  z = (I - Dzw*Delta)^{-1} (Cz x + Dzu u)
        for i in range(n_w):
            dj = P[k, bmap[i]]
            for j in range(n_w):
                M[j, i] = -Dzw[j, i] * dj
            M[i, i] += 1.0
        for i in range(n_w):
            s = 0.0
            for j in range(n_x):
                s += Cz[i, j] * X[k, j]
            for j in range(n_u):
                s += Dzu[i, j] * u[k, j]
            rhs[i] = s
        if n_w > 0:
            if not _solve_destructive(M, rhs):
                return STATUS_SINGULAR, k, np.inf
        for i in range(n_w):
            Z[k, i] = rhs[i]

        # output and state update (w = delta .* z)
        for i in range(n_y):
            s = 0.0
            for j in range(n_x):
                s += Cy[i, j] * X[k, j]
            for j in range(n_w):
                s += Dyw[i, j] * (P[k, bmap[j]] * Z[k, j])
            for j in range(n_u):
                s += Dyu[i, j] * u[k, j]
            Yh[k, i] = s
            e = s - y[k, i]
            loss += e * e
        for i in range(n_x):
            s = 0.0
            for j in range(n_x):
                s += Ax[i, j] * X[k, j]
            for j in range(n_w):
                s += Bw[i, j] * (P[k, bmap[j]] * Z[k, j])
            for j in range(n_u):
                s += Bu[i, j] * u[k, j]
            X[k + 1, i] = s
        ok = True
        for i in range(n_x):
            v = X[k + 1, i]
            if not np.isfinite(v) or abs(v) > _DIVERGE_LIMIT:
                ok = False
        if not (np.isfinite(loss) and loss <= _DIVERGE_LIMIT):
            ok = False
        if not ok:
            return STATUS_DIVERGED, k, np.inf
    return STATUS_OK, N, loss / N


@njit(cache=True, nogil=True)
def rollout_backward(Ax, Bw, Bu, Cz, Dzw, Dzu, Cy, Dyw, Dyu,
                     bmap, use_net,
                     HW, Hb, widths, Whead, Wx, Wu, Wd, bb,
                     u, d, y, X, P, Z, H, Yh,
                     gAx, gBw, gBu, gCz, gDzw, gDzu, gCy, gDyw, gDyu,
                     gHW, gHb, gWhead, gWx, gWu, gWd, gbb, gx0):
    """Reverse sweep over a successful forward tape; accumulates d(loss)/d(.)
    for loss = (1/N) sum_k ||Yh_k - y_k||^2 into the g* arrays (all must be
    zero-initialized by the caller)."""
    N = u.shape[0]
    n_x = Ax.shape[0]
    n_w = Dzw.shape[0]
    n_u = u.shape[1]
    n_d = d.shape[1]
    n_y = Cy.shape[0]
    n_p = P.shape[1]
    L = HW.shape[0]
    scale = 2.0 / N

    xbar_next = np.zeros(n_x)
    xbar = np.zeros(n_x)
    ybar = np.empty(n_y)
    wbar = np.empty(n_w)
    zbar = np.empty(n_w)
    sbar = np.empty(n_w)
    dbar = np.empty(n_w)
    pbar = np.empty(n_p)
    abar = np.empty(n_p)
    MT = np.empty((n_w, n_w))
    wk = np.empty(n_w)
    maxw = HW.shape[1] if L > 0 else 0
    hbar = np.empty(max(maxw, 1))
    hbar2 = np.empty(max(maxw, 1))

    for k in range(N - 1, -1, -1):
        # state recursion adjoint
        for i in range(n_x):
            s = 0.0
            for j in range(n_x):
                s += Ax[j, i] * xbar_next[j]
            xbar[i] = s
        for i in range(n_w):
            wk[i] = P[k, bmap[i]] * Z[k, i]
        for i in range(n_x):
            xb = xbar_next[i]
            for j in range(n_x):
                gAx[i, j] += xb * X[k, j]
            for j in range(n_w):
                gBw[i, j] += xb * wk[j]
            for j in range(n_u):
                gBu[i, j] += xb * u[k, j]
        for i in range(n_w):
            s = 0.0
            for j in range(n_x):
                s += Bw[j, i] * xbar_next[j]
            wbar[i] = s

        # output adjoint
        for i in range(n_y):
            ybar[i] = scale * (Yh[k, i] - y[k, i])
        for i in range(n_y):
            yb = ybar[i]
            for j in range(n_x):
                gCy[i, j] += yb * X[k, j]
            for j in range(n_w):
                gDyw[i, j] += yb * wk[j]
            for j in range(n_u):
                gDyu[i, j] += yb * u[k, j]
        for i in range(n_x):
            s = 0.0
            for j in range(n_y):
                s += Cy[j, i] * ybar[j]
            xbar[i] += s
        for i in range(n_w):
            s = 0.0
            for j in range(n_y):
                s += Dyw[j, i] * ybar[j]
            wbar[i] += s

        # w = delta .* z
        for i in range(n_w):
            dj = P[k, bmap[i]]
            zbar[i] = dj * wbar[i]
            dbar[i] = Z[k, i] * wbar[i]

        # latent solve adjoint: Mbar = -s z^T with M^T s = zbar
        if n_w > 0:
            for i in range(n_w):
                dj = P[k, bmap[i]]
                for j in range(n_w):
                    MT[i, j] = -Dzw[j, i] * dj  # row i of M^T = column i of M
                MT[i, i] += 1.0
            for i in range(n_w):
                sbar[i] = zbar[i]
            _solve_destructive(MT, sbar)
            for i in range(n_w):
                si = sbar[i]
                for j in range(n_w):
                    dj = P[k, bmap[j]]
                    gDzw[i, j] += dj * si * Z[k, j]
            for j in range(n_w):
                acc = 0.0
                for i in range(n_w):
                    acc += Dzw[i, j] * sbar[i]
                dbar[j] += acc * Z[k, j]
            # rhs = Cz x + Dzu u
            for i in range(n_w):
                si = sbar[i]
                for j in range(n_x):
                    gCz[i, j] += si * X[k, j]
                for j in range(n_u):
                    gDzu[i, j] += si * u[k, j]
            for i in range(n_x):
                s = 0.0
                for j in range(n_w):
                    s += Cz[j, i] * sbar[j]
                xbar[i] += s

        # delta diagonal -> scheduling variables
        for i in range(n_p):
            pbar[i] = 0.0
        for i in range(n_w):
            pbar[bmap[i]] += dbar[i]

        # scheduling-net adjoint
        if use_net:
            for i in range(n_p):
                pk = P[k, i]
                abar[i] = pbar[i] * (1.0 - pk * pk)
            for i in range(n_p):
                ab = abar[i]
                gbb[i] += ab
                for j in range(n_x):
                    gWx[i, j] += ab * X[k, j]
                for j in range(n_u):
                    gWu[i, j] += ab * u[k, j]
                for j in range(n_d):
                    gWd[i, j] += ab * d[k, j]
            for i in range(n_x):
                s = 0.0
                for j in range(n_p):
                    s += Wx[j, i] * abar[j]
                xbar[i] += s
            if L > 0:
                wL = widths[L]
                for j in range(wL):
                    s = 0.0
                    for i in range(n_p):
                        s += Whead[i, j] * abar[i]
                    hbar[j] = s
                for i in range(n_p):
                    ab = abar[i]
                    for j in range(wL):
                        gWhead[i, j] += ab * H[L - 1, k, j]
                for l in range(L - 1, -1, -1):
                    w_cur = widths[l + 1]
                    w_prev = widths[l]
                    for i in range(w_cur):
                        h = H[l, k, i]
                        hbar[i] *= (1.0 - h * h)  # now d(loss)/d(pre-act)
                    for i in range(w_cur):
                        sb = hbar[i]
                        gHb[l, i] += sb
                        if l == 0:
                            for j in range(n_x):
                                gHW[l, i, j] += sb * X[k, j]
                            for j in range(n_u):
                                gHW[l, i, n_x + j] += sb * u[k, j]
                            for j in range(n_d):
                                gHW[l, i, n_x + n_u + j] += sb * d[k, j]
                        else:
                            for j in range(w_prev):
                                gHW[l, i, j] += sb * H[l - 1, k, j]
                    for j in range(w_prev):
                        s = 0.0
                        for i in range(w_cur):
                            s += HW[l, i, j] * hbar[i]
                        hbar2[j] = s
                    for j in range(w_prev):
                        hbar[j] = hbar2[j]
                # first-layer input feeds back into the state
                for i in range(n_x):
                    xbar[i] += hbar[i]

        for i in range(n_x):
            xbar_next[i] = xbar[i]

    for i in range(n_x):
        gx0[i] = xbar_next[i]
