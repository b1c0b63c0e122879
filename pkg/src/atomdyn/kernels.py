"""Compiled stepping loops.

The Hamiltonian is a flat triplet list: entry ``e`` contributes
``coef[term[e]] * base[e]`` at (rows[e], cols[e]) and, when ``herm[e]`` is
set, its conjugate at (cols[e], rows[e]). Jump operators are stored
CSR-style: the entries of jump ``k`` are ``jptr[k]:jptr[k+1]``.

All functions work on caller-owned buffers and do not allocate inside the
step loop.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_OPTS = dict(cache=True, nogil=True, error_model="numpy")
_INNER = dict(_OPTS, inline="always")


@njit(**_INNER)
def entry_values(base, term, coef, k, vals):
    """Per-entry coefficients of step k: vals[e] = coef[k, term[e]] * base[e]."""
    for e in range(base.shape[0]):
        vals[e] = coef[k, term[e]] * base[e]


@njit(**_INNER)
def apply_h(rows, cols, vals, herm, x, y):
    """y = H x for a vector x."""
    for i in range(y.shape[0]):
        y[i] = 0.0
    for e in range(rows.shape[0]):
        c = vals[e]
        r = rows[e]
        q = cols[e]
        y[r] += c * x[q]
        if herm[e]:
            y[q] += np.conj(c) * x[r]


@njit(**_INNER)
def apply_h_mat(rows, cols, vals, herm, x, y):
    """Y = H X for a matrix X (row operations)."""
    y[:, :] = 0.0
    n = x.shape[1]
    for e in range(rows.shape[0]):
        c = vals[e]
        if c == 0.0:
            continue
        r = rows[e]
        q = cols[e]
        for j in range(n):
            y[r, j] += c * x[q, j]
        if herm[e]:
            cc = np.conj(c)
            for j in range(n):
                y[q, j] += cc * x[r, j]


@njit(**_INNER)
def taylor_vec(rows, cols, vals, herm, dt, order, psi, tmp, y):
    """psi <- sum_{n<=order} (-i H dt)^n / n! psi, in place."""
    for i in range(psi.shape[0]):
        tmp[i] = psi[i]
    for n in range(1, order + 1):
        apply_h(rows, cols, vals, herm, tmp, y)
        f = complex(0.0, -dt / n)
        for i in range(psi.shape[0]):
            tmp[i] = f * y[i]
            psi[i] += tmp[i]


@njit(**_INNER)
def taylor_mat(rows, cols, vals, herm, dt, order, x, tmp, y):
    """X <- U X with U the order-N Taylor propagator, in place."""
    tmp[:, :] = x
    d, m = x.shape
    for n in range(1, order + 1):
        apply_h_mat(rows, cols, vals, herm, tmp, y)
        f = -1j * dt / n
        for i in range(d):
            for j in range(m):
                tmp[i, j] = f * y[i, j]
                x[i, j] += tmp[i, j]


@njit(**_INNER)
def dissipate(rho, jrows, jcols, jvals, jptr, ldl, dt, acc):
    """rho <- rho + dt * sum_k (L rho L^dag - {L^dag L, rho}/2); L^dag L diagonal (ldl)."""
    d = rho.shape[0]
    for i in range(d):
        for j in range(d):
            acc[i, j] = -0.5 * (ldl[i] + ldl[j]) * rho[i, j]
    for k in range(jptr.shape[0] - 1):
        for e1 in range(jptr[k], jptr[k + 1]):
            v1 = jvals[e1]
            if v1 == 0.0:
                continue
            r1 = jrows[e1]
            c1 = jcols[e1]
            for e2 in range(jptr[k], jptr[k + 1]):
                acc[r1, jrows[e2]] += v1 * rho[c1, jcols[e2]] * np.conj(jvals[e2])
    for i in range(d):
        for j in range(d):
            rho[i, j] += dt * acc[i, j]


@njit(**_INNER)
def hermitize(rho):
    d = rho.shape[0]
    for i in range(d):
        rho[i, i] = rho[i, i].real
        for j in range(i + 1, d):
            v = 0.5 * (rho[i, j] + np.conj(rho[j, i]))
            rho[i, j] = v
            rho[j, i] = np.conj(v)


@njit(**_INNER)
def record_vec(psi, scale, di, dj, dw, did, out_row):
    out_row[:] = 0.0
    for e in range(di.shape[0]):
        out_row[did[e]] += dw[e] * psi[di[e]] * np.conj(psi[dj[e]]) * scale


@njit(**_INNER)
def record_mat(rho, di, dj, dw, did, out_row):
    out_row[:] = 0.0
    for e in range(di.shape[0]):
        out_row[did[e]] += dw[e] * rho[di[e], dj[e]]


@njit(**_INNER)
def _norm2(psi):
    s = 0.0
    for i in range(psi.shape[0]):
        s += psi[i].real * psi[i].real + psi[i].imag * psi[i].imag
    return s


@njit(**_OPTS)
def evolve_se(rows, cols, base, term, herm, coef, dts, k0, k1, order, psi, tmp, y, vals,
              di, dj, dw, did, out, downsample):
    """Steps k0..k1-1 of a pure-state run. Returns k1, or -(k+1) on a non-finite state."""
    for k in range(k0, k1):
        entry_values(base, term, coef, k, vals)
        taylor_vec(rows, cols, vals, herm, dts[k], order, psi, tmp, y)
        if (k + 1) % downsample == 0:
            n2 = _norm2(psi)
            if not np.isfinite(n2):
                return -(k + 1)
            record_vec(psi, 1.0, di, dj, dw, did, out[(k + 1) // downsample - 1])
    return k1


@njit(**_OPTS)
def evolve_me(rows, cols, base, term, herm, coef, dts, k0, k1, order, rho, tmp, y, vals,
              jrows, jcols, jvals, jptr, ldl, di, dj, dw, did, out, downsample):
    """Steps k0..k1-1 of a density-matrix run (unitary Taylor, then Euler dissipator)."""
    d = rho.shape[0]
    for k in range(k0, k1):
        entry_values(base, term, coef, k, vals)
        taylor_mat(rows, cols, vals, herm, dts[k], order, rho, tmp, y)
        # rho now holds U rho; conjugate-transpose and propagate again: U (U rho)^dag = U rho U^dag
        for i in range(d):
            for j in range(i, d):
                a = rho[i, j]
                rho[i, j] = np.conj(rho[j, i])
                rho[j, i] = np.conj(a)
        taylor_mat(rows, cols, vals, herm, dts[k], order, rho, tmp, y)
        if jptr.shape[0] > 1:
            dissipate(rho, jrows, jcols, jvals, jptr, ldl, dts[k], y)
        hermitize(rho)
        if (k + 1) % downsample == 0:
            tr = 0.0
            for i in range(d):
                tr += rho[i, i].real
            if not np.isfinite(tr):
                return -(k + 1)
            record_mat(rho, di, dj, dw, did, out[(k + 1) // downsample - 1])
    return k1


@njit(**_OPTS)
def evolve_mcwf(rows, cols, base, term, herm, coef, dts, k0, k1, order, psi, tmp, y, vals,
                jrows, jcols, jvals, jptr, state, uniforms, di, dj, dw, did, out, downsample,
                jump_steps, jump_ops):
    """Steps of one quantum trajectory under H_eff with stochastic jumps.

    ``state`` holds [threshold, next uniform index, jump count, guard count].
    Uniform random numbers come from ``uniforms``; when fewer than two remain
    the function returns the step it stopped at so the caller can refill
    the pool and resume. Returns k1 when done, -(k+1) on a non-finite state.
    """
    nu = uniforms.shape[0]
    for k in range(k0, k1):
        if int(state[1]) + 2 > nu:
            return k
        entry_values(base, term, coef, k, vals)
        taylor_vec(rows, cols, vals, herm, dts[k], order, psi, tmp, y)
        n2 = _norm2(psi)
        if not np.isfinite(n2):
            return -(k + 1)
        if n2 < state[0]:
            # jump weights <psi|L_k^dag L_k|psi>
            total = 0.0
            nj = jptr.shape[0] - 1
            for kk in range(nj):
                w = 0.0
                for e in range(jptr[kk], jptr[kk + 1]):
                    a = jvals[e] * psi[jcols[e]]
                    w += a.real * a.real + a.imag * a.imag
                total += w
            u = uniforms[int(state[1])]
            state[1] += 1
            if total > 0.0:
                target = u * total
                acc = 0.0
                chosen = nj - 1
                for kk in range(nj):
                    w = 0.0
                    for e in range(jptr[kk], jptr[kk + 1]):
                        a = jvals[e] * psi[jcols[e]]
                        w += a.real * a.real + a.imag * a.imag
                    acc += w
                    if target < acc and w > 0.0:
                        chosen = kk
                        break
                y[:] = 0.0
                for e in range(jptr[chosen], jptr[chosen + 1]):
                    y[jrows[e]] += jvals[e] * psi[jcols[e]]
                nrm = np.sqrt(_norm2(y))
                for i in range(psi.shape[0]):
                    psi[i] = y[i] / nrm
                jc = int(state[2])
                if jc < jump_steps.shape[0]:
                    jump_steps[jc] = k
                    jump_ops[jc] = chosen
                state[2] += 1
            else:
                state[3] += 1
            state[0] = uniforms[int(state[1])]
            state[1] += 1
            n2 = _norm2(psi)
        if (k + 1) % downsample == 0:
            record_vec(psi, 1.0 / n2, di, dj, dw, did, out[(k + 1) // downsample - 1])
    return k1
