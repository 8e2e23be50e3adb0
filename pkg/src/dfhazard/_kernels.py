"""Compiled hydrodynamic update.

A loop-level transcription of :func:`dfhazard.solver._hydro_window_reference`;
the two agree to round-off and the test suite checks that they do. Cells
whose whole 5 x 5 stencil is empty are skipped, which is exact because every
flux out of an empty donor is zeroed by the positivity limiter.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _vel(h, q, hmin):
    return q / h if h >= hmin else 0.0


@njit(cache=True, inline="always")
def _pf(hc, hn, ec, en, zc, zn, hmin, g, dx, sign):
    hc = max(hc, 0.0)
    hn = max(hn, 0.0)
    deta = en - ec
    if (hn < hmin and zn > ec) or (hc < hmin and zc > en):
        deta = 0.0
    return -sign * g * 0.5 * (hc + hn) * deta / dx


@njit(cache=True, inline="always")
def _g(r, nu):
    c = nu * (1.0 - nu) if nu <= 0.5 else 0.25
    phi = min(max(r, 0.0), 1.0)
    return 0.5 * c * (1.0 - phi)


@njit(cache=True)
def hydro_update(h, qx, qy, hc, zb, dt, dx, g, hmin, eps, forward,
                 open_w, open_e, open_n, open_s):
    """One MacCormack-TVD update of padded (ny + 4, nx + 4) window arrays.

    Returns h, qx, qy, hc on the (ny, nx) window and the volume and
    sediment leaving the window through open boundaries (per unit area).
    """
    NY, NX = h.shape
    ny, nx = NY - 4, NX - 4
    lam = dt / dx
    o = 1 if forward else -1
    oc = -o

    # padded cells whose 5x5 stencil holds water
    wetp = np.zeros((NY, NX), dtype=np.bool_)
    for i in range(NY):
        for j in range(NX):
            if h[i, j] > 0.0:
                for a in range(max(i - 2, 0), min(i + 3, NY)):
                    for b in range(max(j - 2, 0), min(j + 3, NX)):
                        wetp[a, b] = True

    u = np.zeros((NY, NX))
    v = np.zeros((NY, NX))
    cel = np.zeros((NY, NX))
    wave = np.zeros((NY, NX))
    eta = np.empty((NY, NX))
    for i in range(NY):
        for j in range(NX):
            eta[i, j] = h[i, j] + zb[i, j]
            if h[i, j] > 0.0:
                u[i, j] = _vel(h[i, j], qx[i, j], hmin)
                v[i, j] = _vel(h[i, j], qy[i, j], hmin)
                cel[i, j] = math.sqrt(g * h[i, j])
                wave[i, j] = math.hypot(u[i, j], v[i, j]) + 2.0 * cel[i, j]

    # predictor on the window plus one halo ring; index (a, b) is padded (a + 1, b + 1)
    hp = np.zeros((ny + 2, nx + 2))
    qxp = np.zeros((ny + 2, nx + 2))
    qyp = np.zeros((ny + 2, nx + 2))
    sx = 1.0 if o > 0 else -1.0
    for a in range(ny + 2):
        for b in range(nx + 2):
            i, j = a + 1, b + 1
            if not wetp[i, j]:
                continue
            ie, je = i, j + o      # x neighbour in the predictor direction
            i_n, jn = i + o, j     # y neighbour
            hp[a, b] = h[i, j] - lam * (o * (qx[ie, je] - qx[i, j]) + o * (qy[i_n, jn] - qy[i, j]))
            ex_c, ex_n = qx[i, j] * u[i, j], qx[ie, je] * u[ie, je]
            fy_c, fy_n = qy[i, j] * u[i, j], qy[i_n, jn] * u[i_n, jn]
            gx_c, gx_n = qx[i, j] * v[i, j], qx[ie, je] * v[ie, je]
            gy_c, gy_n = qy[i, j] * v[i, j], qy[i_n, jn] * v[i_n, jn]
            qxp[a, b] = (qx[i, j] - lam * (o * (ex_n - ex_c) + o * (fy_n - fy_c))
                         + dt * _pf(h[i, j], h[ie, je], eta[i, j], eta[ie, je], zb[i, j], zb[ie, je],
                                    hmin, g, dx, sx))
            qyp[a, b] = (qy[i, j] - lam * (o * (gx_n - gx_c) + o * (gy_n - gy_c))
                         + dt * _pf(h[i, j], h[i_n, jn], eta[i, j], eta[i_n, jn], zb[i, j], zb[i_n, jn],
                                    hmin, g, dx, sx))

    # corrector
    qx_new = np.zeros((ny, nx))
    qy_new = np.zeros((ny, nx))
    sc = 1.0 if oc > 0 else -1.0
    for r in range(ny):
        for c in range(nx):
            a, b = r + 1, c + 1
            i, j = r + 2, c + 2
            if not wetp[i, j]:
                continue
            ae, be = a, b + oc
            an, bn = a + oc, b
            up_c = _vel(hp[a, b], qxp[a, b], hmin)
            vp_c = _vel(hp[a, b], qyp[a, b], hmin)
            up_e = _vel(hp[ae, be], qxp[ae, be], hmin)
            vp_e = _vel(hp[ae, be], qyp[ae, be], hmin)
            up_n = _vel(hp[an, bn], qxp[an, bn], hmin)
            vp_n = _vel(hp[an, bn], qyp[an, bn], hmin)
            zc, ze, zn = zb[a + 1, b + 1], zb[ae + 1, be + 1], zb[an + 1, bn + 1]
            ec, ee, en = hp[a, b] + zc, hp[ae, be] + ze, hp[an, bn] + zn
            qxc = (qx[i, j] - lam * (oc * (qxp[ae, be] * up_e - qxp[a, b] * up_c)
                                     + oc * (qyp[an, bn] * up_n - qyp[a, b] * up_c))
                   + dt * _pf(hp[a, b], hp[ae, be], ec, ee, zc, ze, hmin, g, dx, sc))
            qyc = (qy[i, j] - lam * (oc * (qxp[ae, be] * vp_e - qxp[a, b] * vp_c)
                                     + oc * (qyp[an, bn] * vp_n - qyp[a, b] * vp_c))
                   + dt * _pf(hp[a, b], hp[an, bn], ec, en, zc, zn, hmin, g, dx, sc))
            qx_new[r, c] = 0.5 * (qxp[a, b] + qxc)
            qy_new[r, c] = 0.5 * (qyp[a, b] + qyc)

    # face fluxes with the TVD correction; x face k lies west of window cell k
    vx = np.zeros((ny, nx + 1))
    vy = np.zeros((ny + 1, nx))
    for r in range(ny):
        p = r + 2
        for k in range(nx + 1):
            L, R = k + 1, k + 2
            if not (wetp[p, L] or wetp[p, R]):
                continue
            if forward:
                f = 0.5 * (qx[p, R] + qxp[r + 1, k])
            else:
                f = 0.5 * (qx[p, L] + qxp[r + 1, k + 1])
            ce, cx_, cy_ = eta[p, R] - eta[p, L], qx[p, R] - qx[p, L], qy[p, R] - qy[p, L]
            dot = ce * ce + cx_ * cx_ + cy_ * cy_
            rp = rm = 0.0
            if dot > 0.0:
                rp = ((eta[p, L] - eta[p, L - 1]) * ce + (qx[p, L] - qx[p, L - 1]) * cx_
                      + (qy[p, L] - qy[p, L - 1]) * cy_) / dot
                rm = (ce * (eta[p, R + 1] - eta[p, R]) + cx_ * (qx[p, R + 1] - qx[p, R])
                      + cy_ * (qy[p, R + 1] - qy[p, R])) / dot
            nl = (abs(u[p, L]) + cel[p, L]) * lam
            nr = (abs(u[p, R]) + cel[p, R]) * lam
            w = _g(rp, nl) + _g(rm, nr)
            vx[r, k] = (f - w * ce / lam) * lam
            if k < nx:
                qx_new[r, k] -= w * cx_
                qy_new[r, k] -= w * cy_
            if k > 0:
                qx_new[r, k - 1] += w * cx_
                qy_new[r, k - 1] += w * cy_
    for k in range(ny + 1):
        L, R = k + 1, k + 2
        for c in range(nx):
            q = c + 2
            if not (wetp[L, q] or wetp[R, q]):
                continue
            if forward:
                f = 0.5 * (qy[R, q] + qyp[k, c + 1])
            else:
                f = 0.5 * (qy[L, q] + qyp[k + 1, c + 1])
            ce, cx_, cy_ = eta[R, q] - eta[L, q], qx[R, q] - qx[L, q], qy[R, q] - qy[L, q]
            dot = ce * ce + cx_ * cx_ + cy_ * cy_
            rp = rm = 0.0
            if dot > 0.0:
                rp = ((eta[L, q] - eta[L - 1, q]) * ce + (qx[L, q] - qx[L - 1, q]) * cx_
                      + (qy[L, q] - qy[L - 1, q]) * cy_) / dot
                rm = (ce * (eta[R + 1, q] - eta[R, q]) + cx_ * (qx[R + 1, q] - qx[R, q])
                      + cy_ * (qy[R + 1, q] - qy[R, q])) / dot
            nl = (abs(v[L, q]) + cel[L, q]) * lam
            nr = (abs(v[R, q]) + cel[R, q]) * lam
            w = _g(rp, nl) + _g(rm, nr)
            vy[k, c] = (f - w * ce / lam) * lam
            if k < ny:
                qx_new[k, c] -= w * cx_
                qy_new[k, c] -= w * cy_
            if k > 0:
                qx_new[k - 1, c] += w * cx_
                qy_new[k - 1, c] += w * cy_

    # open boundaries pass outflow only; window edges inside the domain carry nothing
    for r in range(ny):
        vx[r, 0] = min(vx[r, 0], 0.0) if open_w else 0.0
        vx[r, nx] = max(vx[r, nx], 0.0) if open_e else 0.0
    for c in range(nx):
        vy[0, c] = min(vy[0, c], 0.0) if open_n else 0.0
        vy[ny, c] = max(vy[ny, c], 0.0) if open_s else 0.0

    # positivity limiter on each donor's outgoing fluxes
    scale = np.ones((ny, nx))
    for r in range(ny):
        for c in range(nx):
            out = (max(vx[r, c + 1], 0.0) + max(-vx[r, c], 0.0)
                   + max(vy[r + 1, c], 0.0) + max(-vy[r, c], 0.0))
            h0 = h[r + 2, c + 2]
            if out > h0:
                scale[r, c] = h0 / out
    for r in range(ny):
        for k in range(nx + 1):
            f = vx[r, k]
            if f > 0.0 and k > 0:
                vx[r, k] = f * scale[r, k - 1]
            elif f <= 0.0 and k < nx:
                vx[r, k] = f * scale[r, k]
    for k in range(ny + 1):
        for c in range(nx):
            f = vy[k, c]
            if f > 0.0 and k > 0:
                vy[k, c] = f * scale[k - 1, c]
            elif f <= 0.0 and k < ny:
                vy[k, c] = f * scale[k, c]

    h_new = np.zeros((ny, nx))
    hc_new = np.zeros((ny, nx))
    conc = np.zeros((ny, nx))
    for r in range(ny):
        for c in range(nx):
            h0 = h[r + 2, c + 2]
            if h0 > 0.0:
                conc[r, c] = hc[r + 2, c + 2] / h0
    for r in range(ny):
        for c in range(nx):
            i, j = r + 2, c + 2
            if not wetp[i, j]:
                continue
            hn = h[i, j] - (vx[r, c + 1] - vx[r, c]) - (vy[r + 1, c] - vy[r, c])
            h_new[r, c] = max(hn, 0.0)
            # donor concentrations; beyond the window edge the edge cell is its own ghost
            fe, fw, fs, fn = vx[r, c + 1], vx[r, c], vy[r + 1, c], vy[r, c]
            ce_ = conc[r, c] if fe > 0.0 else conc[r, min(c + 1, nx - 1)]
            cw_ = conc[r, max(c - 1, 0)] if fw > 0.0 else conc[r, c]
            cs_ = conc[r, c] if fs > 0.0 else conc[min(r + 1, ny - 1), c]
            cn_ = conc[max(r - 1, 0), c] if fn > 0.0 else conc[r, c]
            hcn = hc[i, j] - (fe * ce_ - fw * cw_) - (fs * cs_ - fn * cn_)
            hc_new[r, c] = max(hcn, 0.0)

    out_v = 0.0
    out_s = 0.0
    for r in range(ny):
        out_v += vx[r, nx] - vx[r, 0]
        out_s += vx[r, nx] * conc[r, nx - 1] - vx[r, 0] * conc[r, 0]
    for c in range(nx):
        out_v += vy[ny, c] - vy[0, c]
        out_s += vy[ny, c] * conc[ny - 1, c] - vy[0, c] * conc[0, c]

    # local speed cap, then thin-layer desingularisation
    e4 = eps ** 4
    for r in range(ny):
        for c in range(nx):
            i, j = r + 2, c + 2
            if not wetp[i, j]:
                continue
            cap = 0.0
            for a in range(i - 1, i + 2):
                for b in range(j - 1, j + 2):
                    if wave[a, b] > cap:
                        cap = wave[a, b]
            hn = h_new[r, c]
            qm = math.hypot(qx_new[r, c], qy_new[r, c])
            lim = cap * hn
            if qm > lim:
                f = lim / qm
                qx_new[r, c] *= f
                qy_new[r, c] *= f
            if hn < eps:
                h4 = hn ** 4
                f = math.sqrt(2.0) * hn * hn / math.sqrt(h4 + max(h4, e4))
                qx_new[r, c] *= f
                qy_new[r, c] *= f
    return h_new, qx_new, qy_new, hc_new, out_v, out_s
