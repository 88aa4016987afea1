# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: Gray-code state enumeration, down-up walk, batch trace eval.

Each function has a pure-numpy twin in ``_fallback.py`` with identical
semantics (and, for the sampler kernel, identical arithmetic order so that
both lanes consume the same uniforms and return byte-identical results).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def gray_energies(const double[:, ::1] J, const double[::1] h):
    """Energies 0.5*s.J.s + h.s for all 2**n sign configurations.

    Output index b encodes the configuration via bit i of b: 1 -> +1, 0 -> -1.
    Enumeration walks the Gray-code sequence, updating the energy and the
    local-field vector in O(n) per visited state.
    """
    cdef Py_ssize_t n = J.shape[0]
    if n > 30:
        raise ValueError("gray_energies: n too large")
    cdef unsigned long long total = 1ULL << n
    out_arr = np.empty(total, dtype=np.float64)
    cdef double[::1] out = out_arr
    sigma_arr = np.full(n, -1.0, dtype=np.float64)
    cdef double[::1] sigma = sigma_arr
    local_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] local = local_arr

    cdef Py_ssize_t a, b, s
    cdef double e = 0.0, acc
    for a in range(n):
        acc = 0.0
        for b in range(n):
            acc += J[a, b] * sigma[b]
        local[a] = acc
        e += 0.5 * sigma[a] * acc + h[a] * sigma[a]

    cdef unsigned long long i, g
    cdef double old
    out[0] = e
    for i in range(1, total):
        s = 0
        while not (i >> s) & 1:
            s += 1
        old = sigma[s]
        e -= 2.0 * old * (local[s] - J[s, s] * old + h[s])
        sigma[s] = -old
        for a in range(n):
            local[a] -= 2.0 * old * J[a, s]
        g = i ^ (i >> 1)
        out[g] = e
    return out_arr


def downup_chain(const double[::1] weights, unsigned char[::1] member,
                 Py_ssize_t k, Py_ssize_t steps, const double[::1] uniforms):
    """Run `steps` down-up moves on the k-subset indicated by `member`.

    One move: drop a uniformly random element i of D, then insert j drawn
    from the remaining ground set (i is a candidate again) with probability
    proportional to weights[j].  Consumes exactly two uniforms per step.
    Mutates `member` in place.
    """
    cdef Py_ssize_t r = weights.shape[0]
    cdef Py_ssize_t t, a, i, j, pos, target_rank
    cdef double total, u, acc
    for t in range(steps):
        target_rank = <Py_ssize_t>(uniforms[2 * t] * k)
        if target_rank >= k:
            target_rank = k - 1
        pos = -1
        i = 0
        for a in range(r):
            if member[a]:
                pos += 1
                if pos == target_rank:
                    i = a
                    break
        member[i] = 0
        total = 0.0
        for a in range(r):
            if not member[a]:
                total += weights[a]
        u = uniforms[2 * t + 1] * total
        acc = 0.0
        j = -1
        for a in range(r):
            if not member[a]:
                acc += weights[a]
                if u < acc:
                    j = a
                    break
        if j < 0:
            for a in range(r - 1, -1, -1):
                if not member[a]:
                    j = a
                    break
        member[j] = 1
    return np.asarray(member)


def eval_traces_batch(const int[::1] gate_i, const int[::1] gate_j,
                      unsigned char[:, ::1] traces, Py_ssize_t n_inputs):
    """Fill NAND-gate output columns of `traces` in place.

    `traces` has one row per evaluation; columns 0..n_inputs-1 hold the
    input bits, column n_inputs+g receives gate g's output.
    """
    cdef Py_ssize_t r = gate_i.shape[0]
    cdef Py_ssize_t batch = traces.shape[0]
    cdef Py_ssize_t b, g
    for b in range(batch):
        for g in range(r):
            traces[b, n_inputs + g] = 1 - (traces[b, gate_i[g]] & traces[b, gate_j[g]])
    return np.asarray(traces)
