"""Pure numpy simulation backend.

Paths advance in lockstep; each path draws from its own counter-based
stream, so results do not depend on how paths are batched.  Works for
any model whose drift and diffusion broadcast over leading axes.
"""
from __future__ import annotations

import math

import numpy as np

from .batch import BRIDGE, SUBSTEP, CoupledBatch, ExitBatch
from .errors import NumericError
from .rng import SUB_BRIDGE, SUB_COUPLED, SUB_DRIVE, SUB_REFINE, normals, uniforms

CHUNK = 64


def _euler(model, y, dt, dw):
    sig = model.diffusion(y)
    out = y + model.drift(y) * dt + np.einsum("nij,nj->ni", sig, dw)
    bad = ~np.all(np.isfinite(out), axis=1)
    if bad.any():
        k = int(np.argmax(bad))
        raise NumericError(f"non-finite Euler step from state {y[k]}", state=y[k].copy())
    return out


def _sphere_fraction(a, b, r):
    """Smallest lam in (0, 1] with |a + lam (b - a)| = r, row-wise."""
    v = b - a
    qa = np.einsum("ij,ij->i", v, v)
    qb = 2.0 * np.einsum("ij,ij->i", a, v)
    qc = np.einsum("ij,ij->i", a, a) - r * r
    disc = np.sqrt(np.maximum(qb * qb - 4.0 * qa * qc, 0.0))
    lam = (-qb + disc) / (2.0 * qa)
    return np.clip(lam, 0.0, 1.0)


def _refine(model, ya, dw, h, k_sub, seed, paths, step, center, r):
    """Re-integrate one coarse interval per row at step h / k_sub.

    Fine increments are fresh draws conditioned to sum to the coarse
    increment (Brownian bridge), so the coarse grid point is preserved.
    Returns ``(found, time_offset, state)``.
    """
    m, d = ya.shape
    hk = h / k_sub
    xi = normals(seed, paths, SUB_REFINE + int(step), 0, k_sub * d).reshape(m, k_sub, d)
    xi *= math.sqrt(hk)
    inc = xi - xi.sum(axis=1, keepdims=True) / k_sub + dw[:, None, :] / k_sub
    found = np.zeros(m, dtype=bool)
    t_off = np.full(m, np.nan)
    state = np.full((m, d), np.nan)
    y = ya.copy()
    live = np.arange(m)
    for k in range(k_sub):
        yn = _euler(model, y[live], hk, inc[live, k])
        rel = yn - center
        out = np.linalg.norm(rel, axis=1) >= r
        if out.any():
            rows = live[out]
            lam = _sphere_fraction(y[rows] - center, rel[out], r)
            p = (y[rows] - center) + lam[:, None] * (rel[out] - (y[rows] - center))
            p *= r / np.linalg.norm(p, axis=1, keepdims=True)
            state[rows] = center + p
            t_off[rows] = np.minimum((k + lam) * hk, h)
            found[rows] = True
        y[live] = yn
        live = live[~out]
        if live.size == 0:
            break
    return found, t_off, state


def exit_batch(model, center, radius, h, method, seed, paths, max_steps,
               refine=100, retain=False):
    paths = np.asarray(paths, dtype=np.int64)
    n, d = len(paths), model.dimension
    center = np.asarray(center, dtype=float).reshape(d)
    r = float(radius)
    sqh = math.sqrt(h)
    band = r - 3.0 * model.sigma_max * sqh

    y = np.tile(model.initial, (n, 1))
    exit_time = np.full(n, np.nan)
    exit_state = np.full((n, d), np.nan)
    steps = np.zeros(n, dtype=np.int64)
    timed_out = np.zeros(n, dtype=bool)
    active = np.arange(n)
    rec_idx, rec_step, rec_state, rec_inc = [], [], [], []
    if retain:
        rec_idx.append(np.arange(n))
        rec_step.append(np.zeros(n, dtype=np.int64))
        rec_state.append(y.copy())

    j = 0
    while active.size:
        if j >= max_steps:
            timed_out[active] = True
            steps[active] = j
            break
        nb = min(CHUNK, max_steps - j)
        z = normals(seed, paths[active], SUB_DRIVE, j * d, nb * d).reshape(active.size, nb, d) * sqh
        if method == BRIDGE:
            coins = uniforms(seed, paths[active], SUB_BRIDGE, j, nb)
        rows = np.arange(active.size)
        for b in range(nb):
            jj = j + b
            act = active[rows]
            ya = y[act]
            dw = z[rows, b]
            yn = _euler(model, ya, h, dw)
            rel = yn - center
            rho = np.linalg.norm(rel, axis=1)
            done = np.zeros(rows.size, dtype=bool)

            if method == SUBSTEP:
                need = (np.linalg.norm(ya - center, axis=1) > band) | (rho >= r)
                if need.any():
                    sel = np.flatnonzero(need)
                    found, t_off, st = _refine(model, ya[sel], dw[sel], h, refine, seed,
                                               paths[act[sel]], jj, center, r)
                    hit = sel[found]
                    exit_time[act[hit]] = jj * h + t_off[found]
                    exit_state[act[hit]] = st[found]
                    done[hit] = True

            naive = (rho >= r) & ~done
            if naive.any():
                exit_time[act[naive]] = (jj + 1) * h
                exit_state[act[naive]] = center + r * rel[naive] / rho[naive, None]
                done |= naive

            if method == BRIDGE:
                cand = ~done
                a = (ya[:, 0] - center[0])[cand]
                bb = rel[cand, 0]
                s2 = (model.diffusion(ya[cand])[:, 0, 0]) ** 2
                with np.errstate(divide="ignore", invalid="ignore"):
                    p_up = np.where(s2 > 0, np.exp(-2.0 * (r - a) * (r - bb) / (s2 * h)), 0.0)
                    p_lo = np.where(s2 > 0, np.exp(-2.0 * (r + a) * (r + bb) / (s2 * h)), 0.0)
                u = coins[rows[cand], b]
                up = u < p_up
                lo = ~up & (u < p_up + (1.0 - p_up) * p_lo)
                fire = up | lo
                if fire.any():
                    idx = np.flatnonzero(cand)[fire]
                    exit_time[act[idx]] = 0.5 * (jj * h + (jj + 1) * h)
                    exit_state[act[idx], 0] = center[0] + np.where(up[fire], r, -r)
                    done[idx] = True

            if retain:
                rec_idx.append(act)
                rec_step.append(np.full(act.size, jj + 1, dtype=np.int64))
                rec_state.append(yn)
                rec_inc.append(dw)
            y[act] = yn
            steps[act[done]] = jj + 1
            rows = rows[~done]
            if rows.size == 0:
                break
        active = active[rows]
        j += nb

    out = ExitBatch(paths, exit_time, exit_state, steps, timed_out, h)
    if retain:
        idx = np.concatenate(rec_idx)
        stp = np.concatenate(rec_step)
        order = np.lexsort((stp, idx))
        out.states = np.concatenate(rec_state)[order]
        out.offsets = np.concatenate([[0], np.cumsum(np.bincount(idx, minlength=n))])
        if rec_inc:
            iidx = np.concatenate(rec_idx[1:])
            istp = np.concatenate(rec_step[1:])
            out.increments = np.concatenate(rec_inc)[np.lexsort((istp, iidx))]
        else:
            out.increments = np.empty((0, d))
    return out


def grid_batch(model, n_steps, h, seed, paths):
    """Euler paths on the uniform grid ``0, h, ..., n_steps * h``."""
    paths = np.asarray(paths, dtype=np.int64)
    n, d = len(paths), model.dimension
    states = np.empty((n, n_steps + 1, d))
    states[:, 0] = model.initial
    if n_steps == 0:
        return states, np.empty((n, 0, d))
    inc = normals(seed, paths, SUB_DRIVE, 0, n_steps * d).reshape(n, n_steps, d) * math.sqrt(h)
    y = states[:, 0].copy()
    for j in range(n_steps):
        y = _euler(model, y, h, inc[:, j])
        states[:, j + 1] = y
    return states, inc


def coupled_batch(model, center, radius, h_fine, factors, seed, paths, max_steps):
    """Coupled coarse Euler tracks driven by sums of the same fine increments.

    Track ``t`` steps with ``factors[t] * h_fine`` and gets the sum of the
    ``factors[t]`` fine increments of each coarse interval.  ``max_steps``
    counts fine steps.  One-dimensional models only.
    """
    paths = np.asarray(paths, dtype=np.int64)
    factors = np.asarray(factors, dtype=np.int64)
    n, nt = len(paths), len(factors)
    c = float(np.asarray(center).reshape(-1)[0])
    r = float(radius)
    sqh = math.sqrt(h_fine)
    naive = np.full((n, nt), np.nan)
    corr = np.full((n, nt), np.nan)
    timed_out = np.zeros(n, dtype=bool)
    y = np.full((n, nt), model.initial[0])
    acc = np.zeros((n, nt))
    active = np.arange(n)
    j = 0
    while active.size:
        if j >= max_steps:
            timed_out[active] = True
            break
        nb = min(CHUNK, max_steps - j)
        z = normals(seed, paths[active], SUB_DRIVE, j, nb) * sqh
        rows = np.arange(active.size)
        for b in range(nb):
            jj = j + b
            act = active[rows]
            acc[act] += z[rows, b][:, None]
            for t, f in enumerate(factors):
                if (jj + 1) % f:
                    continue
                big = int(f) * h_fine
                jc = (jj + 1) // f - 1
                live = act[np.isnan(naive[act, t])]
                if live.size == 0:
                    continue
                ya = y[live, t]
                dw = acc[live, t]
                yn = _euler(model, ya[:, None], big, dw[:, None])[:, 0]
                s2 = model.diffusion(ya[:, None])[:, 0, 0] ** 2
                out = np.abs(yn - c) >= r
                naive[live[out], t] = (jc + 1) * big
                cand = np.isnan(corr[live, t])
                fresh_out = out & cand
                corr[live[fresh_out], t] = (jc + 1) * big
                cand &= ~out
                if cand.any():
                    sub = SUB_BRIDGE if f == 1 else SUB_COUPLED + int(f)
                    u = uniforms(seed, paths[live[cand]], sub, jc, 1)[:, 0]
                    a = ya[cand] - c
                    bb = yn[cand] - c
                    with np.errstate(divide="ignore", invalid="ignore"):
                        p_up = np.where(s2[cand] > 0, np.exp(-2.0 * (r - a) * (r - bb) / (s2[cand] * big)), 0.0)
                        p_lo = np.where(s2[cand] > 0, np.exp(-2.0 * (r + a) * (r + bb) / (s2[cand] * big)), 0.0)
                    fire = u < p_up + (1.0 - p_up) * p_lo
                    corr[live[cand][fire], t] = 0.5 * (jc * big + (jc + 1) * big)
                y[live, t] = yn
                acc[live, t] = 0.0
            finished = ~np.any(np.isnan(naive[act]), axis=1)
            rows = rows[~finished]
            if rows.size == 0:
                break
        active = active[rows]
        j += nb
    return CoupledBatch(paths, factors, h_fine, naive, corr, timed_out)
