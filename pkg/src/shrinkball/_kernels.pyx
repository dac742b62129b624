# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: Philox streams and Euler stepping until exit.

Mirrors :mod:`shrinkball._fallback` for models described by a
``KernelSpec``.  The integer streams are identical; transcendental
functions come from libm, so floating results can differ from numpy in
the last bits.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, cos, sin, exp, fabs, isfinite, M_PI
from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, realloc, free

from .errors import NumericError

cnp.import_array()

cdef extern from *:
    """
    #include <stdint.h>
    static inline void sb_philox(uint64_t c0, uint64_t c1, uint64_t c2, uint64_t c3,
                                 uint64_t k0, uint64_t k1, uint64_t *out) {
        int i;
        for (i = 0; i < 10; ++i) {
            if (i) { k0 += 0x9E3779B97F4A7C15ULL; k1 += 0xBB67AE8584CAA73BULL; }
            unsigned __int128 p0 = (unsigned __int128)0xD2E7470EE14C6C93ULL * c0;
            unsigned __int128 p1 = (unsigned __int128)0xCA5A826395121157ULL * c2;
            uint64_t hi0 = (uint64_t)(p0 >> 64), lo0 = (uint64_t)p0;
            uint64_t hi1 = (uint64_t)(p1 >> 64), lo1 = (uint64_t)p1;
            c0 = hi1 ^ c1 ^ k0; c1 = lo1; c2 = hi0 ^ c3 ^ k1; c3 = lo0;
        }
        out[0] = c0; out[1] = c1; out[2] = c2; out[3] = c3;
    }
    """
    void sb_philox(uint64_t c0, uint64_t c1, uint64_t c2, uint64_t c3,
                   uint64_t k0, uint64_t k1, uint64_t *out) nogil

cdef enum:
    NAIVE = 0
    BRIDGE = 1
    SUBSTEP = 2
    SUB_DRIVE = 0
    SUB_BRIDGE = 1
    SUB_REFINE = 2
    MAXD = 8

cdef uint64_t SUB_COUPLED = (<uint64_t>1) << 62
cdef double TWO_M53 = 1.0 / 9007199254740992.0
cdef double COIN_FLOOR = 40.0


cdef struct Stream:
    uint64_t seed
    uint64_t path
    uint64_t sub
    uint64_t block
    bint filled
    bint gauss
    double buf[4]


cdef inline void stream_init(Stream *s, uint64_t seed, uint64_t path, uint64_t sub, bint gauss) noexcept nogil:
    s.seed = seed
    s.path = path
    s.sub = sub
    s.filled = False
    s.gauss = gauss


cdef inline double to_unit(uint64_t w) noexcept nogil:
    return (<double>(w >> 11) + 0.5) * TWO_M53


cdef inline void stream_fill(Stream *s, uint64_t block) noexcept nogil:
    cdef uint64_t w[4]
    cdef double r0, r1, a0, a1
    sb_philox(block, s.sub, 0, 0, s.seed, s.path, w)
    if s.gauss:
        r0 = sqrt(-2.0 * log(to_unit(w[0])))
        a0 = (2.0 * M_PI) * to_unit(w[1])
        r1 = sqrt(-2.0 * log(to_unit(w[2])))
        a1 = (2.0 * M_PI) * to_unit(w[3])
        s.buf[0] = r0 * cos(a0)
        s.buf[1] = r0 * sin(a0)
        s.buf[2] = r1 * cos(a1)
        s.buf[3] = r1 * sin(a1)
    else:
        s.buf[0] = to_unit(w[0])
        s.buf[1] = to_unit(w[1])
        s.buf[2] = to_unit(w[2])
        s.buf[3] = to_unit(w[3])
    s.block = block
    s.filled = True


cdef inline double stream_get(Stream *s, uint64_t idx) noexcept nogil:
    cdef uint64_t b = idx >> 2
    if not s.filled or s.block != b:
        stream_fill(s, b)
    return s.buf[idx & 3]


cdef struct Model:
    int kind
    int d
    double kappa
    double sigma[MAXD * MAXD]


cdef inline void model_sigma(Model *m, const double *y, double *out) noexcept nogil:
    cdef int i, d = m.d
    cdef double y1
    if m.kind == 0:
        for i in range(d * d):
            out[i] = m.sigma[i]
    else:
        for i in range(d * d):
            out[i] = 0.0
        y1 = y[0]
        out[0] = 1.0 + y1 * y1 / (1.0 + y1 * y1)
        out[d + 1] = 1.0


cdef inline bint euler(Model *m, const double *y, double dt, const double *dw, double *out) noexcept nogil:
    """One Euler step; returns False on a non-finite result."""
    cdef int i, k, d = m.d
    cdef double sig[MAXD * MAXD]
    cdef double acc
    cdef bint ok = True
    model_sigma(m, y, sig)
    for i in range(d):
        acc = 0.0
        for k in range(d):
            acc = acc + sig[i * d + k] * dw[k]
        out[i] = (y[i] + (-m.kappa * y[i]) * dt) + acc
        if not isfinite(out[i]):
            ok = False
    return ok


cdef inline double dist(const double *y, const double *c, int d) noexcept nogil:
    cdef int i
    cdef double s = 0.0, v
    for i in range(d):
        v = y[i] - c[i]
        s = s + v * v
    return sqrt(s)


cdef struct Growable:
    double *data
    Py_ssize_t size
    Py_ssize_t cap


cdef inline int grow_push(Growable *g, const double *v, int n) noexcept nogil:
    cdef Py_ssize_t newcap
    cdef double *p
    cdef int i
    if g.size + n > g.cap:
        newcap = 2 * g.cap + n + 1024
        p = <double *> realloc(g.data, newcap * sizeof(double))
        if p == NULL:
            return -1
        g.data = p
        g.cap = newcap
    for i in range(n):
        g.data[g.size + i] = v[i]
    g.size += n
    return 0


cdef void init_model(Model *m, int kind, double kappa, object sigma) except *:
    cdef cnp.ndarray[double, ndim=2] sig = np.ascontiguousarray(sigma, dtype=np.float64)
    cdef int d = sig.shape[0]
    cdef int i, k
    if d < 1 or d > MAXD:
        raise ValueError(f"compiled kernel supports 1 <= d <= {MAXD}")
    m.kind = kind
    m.d = d
    m.kappa = kappa
    for i in range(d):
        for k in range(d):
            m.sigma[i * d + k] = sig[i, k]


def philox_block(uint64_t seed, uint64_t path, uint64_t sub, uint64_t block):
    cdef uint64_t w[4]
    sb_philox(block, sub, 0, 0, seed, path, w)
    return np.array([w[0], w[1], w[2], w[3]], dtype=np.uint64)


def normals(uint64_t seed, paths, uint64_t sub, uint64_t start, Py_ssize_t count):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] p = np.ascontiguousarray(paths, dtype=np.uint64).reshape(-1)
    cdef cnp.ndarray[double, ndim=2] out = np.empty((p.shape[0], count))
    cdef Stream s
    cdef Py_ssize_t i, k
    for i in range(p.shape[0]):
        stream_init(&s, seed, p[i], sub, True)
        for k in range(count):
            out[i, k] = stream_get(&s, start + k)
    return out


def uniforms(uint64_t seed, paths, uint64_t sub, uint64_t start, Py_ssize_t count):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] p = np.ascontiguousarray(paths, dtype=np.uint64).reshape(-1)
    cdef cnp.ndarray[double, ndim=2] out = np.empty((p.shape[0], count))
    cdef Stream s
    cdef Py_ssize_t i, k
    for i in range(p.shape[0]):
        stream_init(&s, seed, p[i], sub, False)
        for k in range(count):
            out[i, k] = stream_get(&s, start + k)
    return out


def exit_batch(int kind, double kappa, sigma, double sigma_max, x0, center,
               double r, double h, int method, uint64_t seed, paths,
               int64_t max_steps, int refine=100, bint retain=False):
    """Simulate each path until it leaves the ball ``|y - center| < r``.

    Returns ``(exit_time, exit_state, steps, timed_out, offsets, states,
    increments)``; the last three are ``None`` unless ``retain``.
    """
    cdef Model m
    init_model(&m, kind, kappa, sigma)
    cdef int d = m.d
    cdef cnp.ndarray[double, ndim=1] xa = np.ascontiguousarray(x0, dtype=np.float64).reshape(-1)
    cdef cnp.ndarray[double, ndim=1] ca = np.ascontiguousarray(center, dtype=np.float64).reshape(-1)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] pa = np.ascontiguousarray(paths, dtype=np.int64).reshape(-1)
    cdef Py_ssize_t n = pa.shape[0]
    cdef cnp.ndarray[double, ndim=1] exit_time = np.full(n, np.nan)
    cdef cnp.ndarray[double, ndim=2] exit_state = np.full((n, d), np.nan)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] steps = np.zeros(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] timed_out = np.zeros(n, dtype=np.uint8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] offsets = np.zeros(n + 1, dtype=np.int64)

    cdef double *xptr = &xa[0]
    cdef double *c = &ca[0]
    cdef double y[MAXD]
    cdef double yn[MAXD]
    cdef double yf[MAXD]
    cdef double yfn[MAXD]
    cdef double dw[MAXD]
    cdef double pv[MAXD]
    cdef double sig[MAXD * MAXD]
    cdef double sqh = sqrt(h)
    cdef double band = r - 3.0 * sigma_max * sqh
    cdef double hk = h / refine
    cdef double sqhk = sqrt(hk)
    cdef double *xi = <double *> malloc(refine * d * sizeof(double))
    cdef double xsum[MAXD]
    cdef Stream drive, coin, fine
    cdef Growable gs, gi
    gs.data = NULL; gs.size = 0; gs.cap = 0
    gi.data = NULL; gi.size = 0; gi.cap = 0
    cdef Py_ssize_t i, total = 0
    cdef int64_t j
    cdef int k, q, kk
    cdef double rho, rho_a, a, b, s2, p_up, p_lo, u, lam, qa, qb, qc, disc, nrm, t_off
    cdef bint done, bad = False, oom = False
    cdef Py_ssize_t bad_path = -1
    cdef double bad_state[MAXD]

    if xi == NULL:
        raise MemoryError()
    with nogil:
        for i in range(n):
            stream_init(&drive, seed, <uint64_t>pa[i], SUB_DRIVE, True)
            stream_init(&coin, seed, <uint64_t>pa[i], SUB_BRIDGE, False)
            for q in range(d):
                y[q] = xptr[q]
            if retain:
                if grow_push(&gs, y, d) != 0:
                    oom = True
                    break
            j = 0
            done = False
            while not done:
                if j >= max_steps:
                    timed_out[i] = 1
                    break
                for q in range(d):
                    dw[q] = sqh * stream_get(&drive, <uint64_t>(j * d + q))
                if not euler(&m, y, h, dw, yn):
                    bad = True
                    bad_path = i
                    for q in range(d):
                        bad_state[q] = y[q]
                    break
                rho = dist(yn, c, d)

                if method == SUBSTEP:
                    rho_a = dist(y, c, d)
                    if rho_a > band or rho >= r:
                        stream_init(&fine, seed, <uint64_t>pa[i], SUB_REFINE + <uint64_t>j, True)
                        for q in range(d):
                            xsum[q] = 0.0
                        for k in range(refine * d):
                            xi[k] = stream_get(&fine, <uint64_t>k) * sqhk
                        for kk in range(refine):
                            for q in range(d):
                                xsum[q] = xsum[q] + xi[kk * d + q]
                        for q in range(d):
                            yf[q] = y[q]
                        for kk in range(refine):
                            for q in range(d):
                                pv[q] = (xi[kk * d + q] - xsum[q] / refine) + dw[q] / refine
                            if not euler(&m, yf, hk, pv, yfn):
                                bad = True
                                bad_path = i
                                for q in range(d):
                                    bad_state[q] = yf[q]
                                break
                            if dist(yfn, c, d) >= r:
                                qa = 0.0
                                qb = 0.0
                                qc = 0.0
                                for q in range(d):
                                    a = yf[q] - c[q]
                                    b = (yfn[q] - c[q]) - a
                                    qa = qa + b * b
                                    qb = qb + a * b
                                    qc = qc + a * a
                                qb = 2.0 * qb
                                qc = qc - r * r
                                disc = qb * qb - 4.0 * qa * qc
                                if disc < 0.0:
                                    disc = 0.0
                                lam = (-qb + sqrt(disc)) / (2.0 * qa)
                                if lam < 0.0:
                                    lam = 0.0
                                elif lam > 1.0:
                                    lam = 1.0
                                nrm = 0.0
                                for q in range(d):
                                    a = yf[q] - c[q]
                                    pv[q] = a + lam * ((yfn[q] - c[q]) - a)
                                    nrm = nrm + pv[q] * pv[q]
                                nrm = sqrt(nrm)
                                for q in range(d):
                                    exit_state[i, q] = c[q] + pv[q] * (r / nrm)
                                t_off = (kk + lam) * hk
                                if t_off > h:
                                    t_off = h
                                exit_time[i] = j * h + t_off
                                done = True
                                break
                            for q in range(d):
                                yf[q] = yfn[q]
                        if bad:
                            break

                if not done and rho >= r:
                    exit_time[i] = (j + 1) * h
                    for q in range(d):
                        exit_state[i, q] = c[q] + r * (yn[q] - c[q]) / rho
                    done = True

                if method == BRIDGE and not done:
                    model_sigma(&m, y, sig)
                    s2 = sig[0] * sig[0]
                    a = y[0] - c[0]
                    b = yn[0] - c[0]
                    # a coin is at least 2**-54, so crossing probabilities below
                    # exp(-COIN_FLOOR) can never fire and need no evaluation
                    p_up = 0.0
                    p_lo = 0.0
                    if s2 > 0.0:
                        if 2.0 * (r - a) * (r - b) < COIN_FLOOR * s2 * h:
                            p_up = exp(-2.0 * (r - a) * (r - b) / (s2 * h))
                        if 2.0 * (r + a) * (r + b) < COIN_FLOOR * s2 * h:
                            p_lo = exp(-2.0 * (r + a) * (r + b) / (s2 * h))
                    if p_up == 0.0 and p_lo == 0.0:
                        u = 1.0
                    else:
                        u = stream_get(&coin, <uint64_t>j)
                    if u < p_up:
                        exit_time[i] = 0.5 * (j * h + (j + 1) * h)
                        exit_state[i, 0] = c[0] + r
                        done = True
                    elif u < p_up + (1.0 - p_up) * p_lo:
                        exit_time[i] = 0.5 * (j * h + (j + 1) * h)
                        exit_state[i, 0] = c[0] - r
                        done = True

                if retain:
                    if grow_push(&gs, yn, d) != 0 or grow_push(&gi, dw, d) != 0:
                        oom = True
                        break
                for q in range(d):
                    y[q] = yn[q]
                j += 1
            steps[i] = j
            if retain:
                offsets[i + 1] = gs.size // d
            if bad or oom:
                break
    free(xi)
    try:
        if oom:
            raise MemoryError("retained path buffer")
        if bad:
            state = np.array([bad_state[q] for q in range(d)])
            raise NumericError(f"non-finite Euler step from state {state}", state=state)
        if not retain:
            return exit_time, exit_state, steps, timed_out.astype(bool), None, None, None
        st = np.empty((gs.size // d, d))
        inc = np.empty((gi.size // d, d))
        for i in range(gs.size):
            st.flat[i] = gs.data[i]
        for i in range(gi.size):
            inc.flat[i] = gi.data[i]
        return exit_time, exit_state, steps, timed_out.astype(bool), offsets, st, inc
    finally:
        free(gs.data)
        free(gi.data)


def grid_batch(int kind, double kappa, sigma, x0, int64_t n_steps, double h,
               uint64_t seed, paths):
    cdef Model m
    init_model(&m, kind, kappa, sigma)
    cdef int d = m.d
    cdef cnp.ndarray[double, ndim=1] xa = np.ascontiguousarray(x0, dtype=np.float64).reshape(-1)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] pa = np.ascontiguousarray(paths, dtype=np.int64).reshape(-1)
    cdef Py_ssize_t n = pa.shape[0]
    cdef cnp.ndarray[double, ndim=3] states = np.empty((n, n_steps + 1, d))
    cdef cnp.ndarray[double, ndim=3] incs = np.empty((n, n_steps, d))
    cdef double y[MAXD]
    cdef double yn[MAXD]
    cdef double dw[MAXD]
    cdef double sqh = sqrt(h)
    cdef Stream drive
    cdef Py_ssize_t i
    cdef int64_t j
    cdef int q
    cdef bint bad = False
    cdef double bad_state[MAXD]
    with nogil:
        for i in range(n):
            stream_init(&drive, seed, <uint64_t>pa[i], SUB_DRIVE, True)
            for q in range(d):
                y[q] = xa[q]
                states[i, 0, q] = y[q]
            for j in range(n_steps):
                for q in range(d):
                    dw[q] = sqh * stream_get(&drive, <uint64_t>(j * d + q))
                    incs[i, j, q] = dw[q]
                if not euler(&m, y, h, dw, yn):
                    bad = True
                    for q in range(d):
                        bad_state[q] = y[q]
                    break
                for q in range(d):
                    y[q] = yn[q]
                    states[i, j + 1, q] = y[q]
            if bad:
                break
    if bad:
        state = np.array([bad_state[q] for q in range(d)])
        raise NumericError(f"non-finite Euler step from state {state}", state=state)
    return states, incs


def coupled_batch(int kind, double kappa, sigma, x0, double center, double r,
                  double h_fine, factors, uint64_t seed, paths, int64_t max_steps):
    """Coupled coarse tracks for the discretisation-bias study (d = 1)."""
    cdef Model m
    init_model(&m, kind, kappa, sigma)
    if m.d != 1:
        raise ValueError("coupled tracks need a one-dimensional model")
    cdef cnp.ndarray[cnp.int64_t, ndim=1] fa = np.ascontiguousarray(factors, dtype=np.int64).reshape(-1)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] pa = np.ascontiguousarray(paths, dtype=np.int64).reshape(-1)
    cdef int nt = fa.shape[0]
    cdef Py_ssize_t n = pa.shape[0]
    cdef cnp.ndarray[double, ndim=2] naive = np.full((n, nt), np.nan)
    cdef cnp.ndarray[double, ndim=2] corr = np.full((n, nt), np.nan)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] timed_out = np.zeros(n, dtype=np.uint8)
    cdef double x = np.asarray(x0, dtype=np.float64).reshape(-1)[0]
    if nt > 32:
        raise ValueError("at most 32 coupled tracks")
    cdef double y[32]
    cdef double acc[32]
    cdef bint alive[32]
    cdef bint ccorr[32]
    cdef double sig[MAXD * MAXD]
    cdef double yn, dwf, big, a, b, s2, p_up, p_lo, u, dwc
    cdef double sqh = sqrt(h_fine)
    cdef Stream drive, coin
    cdef Py_ssize_t i
    cdef int64_t j, jc, f
    cdef int t, left
    cdef uint64_t sub
    cdef bint bad = False
    with nogil:
        for i in range(n):
            stream_init(&drive, seed, <uint64_t>pa[i], SUB_DRIVE, True)
            for t in range(nt):
                y[t] = x
                acc[t] = 0.0
                alive[t] = True
                ccorr[t] = True
            left = nt
            j = 0
            while left > 0:
                if j >= max_steps:
                    timed_out[i] = 1
                    break
                dwf = sqh * stream_get(&drive, <uint64_t>j)
                for t in range(nt):
                    acc[t] = acc[t] + dwf
                for t in range(nt):
                    f = fa[t]
                    if (j + 1) % f != 0 or not alive[t]:
                        continue
                    big = f * h_fine
                    jc = (j + 1) // f - 1
                    dwc = acc[t]
                    if not euler(&m, &y[t], big, &dwc, &yn):
                        bad = True
                        break
                    model_sigma(&m, &y[t], sig)
                    s2 = sig[0] * sig[0]
                    if fabs(yn - center) >= r:
                        naive[i, t] = (jc + 1) * big
                        alive[t] = False
                        left -= 1
                        if ccorr[t]:
                            corr[i, t] = (jc + 1) * big
                            ccorr[t] = False
                    elif ccorr[t]:
                        sub = SUB_BRIDGE if f == 1 else SUB_COUPLED + <uint64_t>f
                        stream_init(&coin, seed, <uint64_t>pa[i], sub, False)
                        u = stream_get(&coin, <uint64_t>jc)
                        a = y[t] - center
                        b = yn - center
                        p_up = 0.0
                        p_lo = 0.0
                        if s2 > 0.0:
                            if 2.0 * (r - a) * (r - b) < COIN_FLOOR * s2 * big:
                                p_up = exp(-2.0 * (r - a) * (r - b) / (s2 * big))
                            if 2.0 * (r + a) * (r + b) < COIN_FLOOR * s2 * big:
                                p_lo = exp(-2.0 * (r + a) * (r + b) / (s2 * big))
                        if u < p_up + (1.0 - p_up) * p_lo:
                            corr[i, t] = 0.5 * (jc * big + (jc + 1) * big)
                            ccorr[t] = False
                    y[t] = yn
                    acc[t] = 0.0
                if bad:
                    break
                j += 1
            if bad:
                break
    if bad:
        raise NumericError("non-finite Euler step in coupled tracks")
    return naive, corr, timed_out.astype(bool)
