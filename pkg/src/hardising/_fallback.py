"""Pure-numpy twins of the compiled kernels.

Selected automatically when the Cython extension is unavailable; see
``kernels.py``.  `downup_chain` mirrors the compiled loop operation by
operation so both lanes return byte-identical subsets for the same
uniforms.
"""

import numpy as np

_CHUNK_BITS = 16


def gray_energies(J, h):
    """Energies 0.5*s.J.s + h.s for all 2**n configs, chunked matmul."""
    J = np.asarray(J, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    n = J.shape[0]
    if n > 30:
        raise ValueError("gray_energies: n too large")
    total = 1 << n
    out = np.empty(total, dtype=np.float64)
    chunk = min(total, 1 << _CHUNK_BITS)
    bitpos = np.arange(n, dtype=np.uint64)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.uint64)
        signs = (((idx[:, None] >> bitpos[None, :]) & 1).astype(np.float64) * 2.0 - 1.0)
        out[start:start + idx.size] = (
            0.5 * np.einsum("bi,ij,bj->b", signs, J, signs) + signs @ h
        )
    return out


def downup_chain(weights, member, k, steps, uniforms):
    """Reference down-up walk; same uniform-consumption order as compiled."""
    weights = np.asarray(weights, dtype=np.float64)
    member = np.asarray(member, dtype=np.uint8)
    r = weights.shape[0]
    for t in range(steps):
        target_rank = int(uniforms[2 * t] * k)
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
    return member


def eval_traces_batch(gate_i, gate_j, traces, n_inputs):
    """Fill gate-output columns, vectorized over the batch per gate."""
    gate_i = np.asarray(gate_i)
    gate_j = np.asarray(gate_j)
    for g in range(gate_i.shape[0]):
        traces[:, n_inputs + g] = 1 - (traces[:, gate_i[g]] & traces[:, gate_j[g]])
    return traces
