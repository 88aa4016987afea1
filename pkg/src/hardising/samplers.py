"""Stochastic machinery over gadget instances.

Conditional-on-phase sampling factors through the S sites: an independence
rejection sampler draws S assignments from the exactly-normalizable
product reference (per-site two-point factors, per-matched-pair joint
factors) and accepts against the exact pinned mass, with the certified
envelope (1+eps/(5m))^m; R blocks are then filled per gadget by drawing a
magnetization sector and a uniform subset (the conditional fields on an R
block are uniform, so the tilted subset law is exact there).  The generic
weighted-subset path runs the down-up walk and is kept for cross-checks.

Partition functions restricted to a phase come from either bounded-weight
importance sampling against the same product reference (default) or the
sampling-to-counting estimator with greedy conditioning and median
amplification (retained, paper-faithful).  The rejection reduction turns a
stream of phase-level samples into gadget-level samples.
"""

import csv
import hashlib
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .gadgets import (
    GadgetInstance,
    InfeasibleError,
    log_mu_source,
    log_z_hat_product,
    normalization_A,
)
from .rng import RngStream, sample_distinct

DOWNUP_R_LIMIT = 1 << 20
CONFIG_SIZE_LIMIT = 1 << 30  # bits per materialized configuration


class EnvelopeViolation(RuntimeError):
    """Observed weight outside the certified band: r_v below the proof-valid
    regime (or a corrupted instance)."""


class StreamShortfall(RuntimeError):
    """Phase stream ended before the requested number of acceptances."""

    def __init__(self, msg, accepted, consumed):
        super().__init__(msg)
        self.accepted = accepted
        self.consumed = consumed


@dataclass(frozen=True)
class EstimateResult:
    log_value: float
    epsilon: float
    delta: float
    repetitions: int


# ---------------------------------------------------------------------------
# Down-up walk on weighted k-subsets.


def down_up_step(subset, weights, rng: RngStream):
    """One down-up move: drop a uniform element, re-add proportionally.

    subset is an index array; returns a new sorted index array.  Reversible
    with respect to P(D) ~ prod_{i in D} weights[i].
    """
    weights = np.asarray(weights, dtype=np.float64)
    subset = np.asarray(subset, dtype=np.int64)
    r = weights.shape[0]
    k = subset.shape[0]
    if not 1 <= k <= r:
        raise ValueError("down_up_step: k out of range")
    if np.any(weights <= 0):
        raise ValueError("down_up_step: weights must be positive")
    member = np.zeros(r, dtype=np.uint8)
    member[subset] = 1
    u = rng.random(2)
    kernels.downup_chain(weights, member, k, 1, u)
    return np.flatnonzero(member).astype(np.int64)


def down_up_walk(weights, k: int, steps: int, rng: RngStream, start=None):
    """Run the chain `steps` moves from `start` (default: uniform k-subset)."""
    weights = np.asarray(weights, dtype=np.float64)
    r = weights.shape[0]
    if r > DOWNUP_R_LIMIT:
        raise ValueError("down_up_walk: ground set too large")
    member = np.zeros(r, dtype=np.uint8)
    if start is None:
        start = sample_distinct(rng, r, k)
    member[np.asarray(start, dtype=np.int64)] = 1
    u = rng.random(2 * steps)
    kernels.downup_chain(weights, member, k, steps, u)
    return np.flatnonzero(member).astype(np.int64)


def downup_mixing_steps(r: int, delta: float) -> int:
    """ceil(4 r ln(r/delta)); the walk's order-optimal step count."""
    return int(math.ceil(4.0 * r * math.log(r / delta)))


# ---------------------------------------------------------------------------
# Conditional samplers.


def _pair_factor_tables(instance: GadgetInstance, y):
    """Per matched pair: the 2x2 log factor Q_i(a) Q_j(b) exp(w a b)."""
    from .gadgets import s_pair_entries

    consts = instance.plan.consts
    log_q = {1: math.log(consts.q_plus), -1: math.log(consts.q_minus)}
    tables = []
    for li, lj, wt, (u, v) in s_pair_entries(instance):
        yu, yv = int(y[u]), int(y[v])
        tab = np.array([
            [log_q[a * yu] + log_q[b * yv] + wt * a * b for b in (1, -1)]
            for a in (1, -1)
        ])  # index 0 -> +1, 1 -> -1
        tables.append((li, lj, tab))
    return tables


def _vertex_site_logp(instance: GadgetInstance, y):
    """(sites, log p_plus, log p_minus) for every field site of every gadget."""
    p = instance.plan
    consts = p.consts
    sites, lp, lm = [], [], []
    pos = 0
    for v in range(instance.m):
        a = p.h_tilde[v] + float(y[v]) * p.beta * consts.gap
        t0 = p.t0[v]
        from .gadgets import log2cosh
        for i in range(t0):
            sites.append(pos + i)
            lp.append(a - log2cosh(np.float64(a)))
            lm.append(-a - log2cosh(np.float64(a)))
        pos += instance.s_sizes[v]
    return np.asarray(sites), np.asarray(lp, dtype=float), np.asarray(lm, dtype=float)


def _propose_s_batch(instance: GadgetInstance, y, rng: RngStream, count: int, pinned=None):
    """Draw `count` sigma_S rows from the product reference given `pinned`.

    Returns (sigma (count, |S|) int8, log reference mass per row).  The
    reference is the per-site two-point / per-matched-pair product;
    conditioning restricts each independent factor.
    """
    s_total = instance.s_total
    sigma = np.zeros((count, s_total), dtype=np.int8)
    if pinned is not None:
        sigma[:] = np.asarray(pinned, dtype=np.int8)[None, :]
    log_mass = np.zeros(count)

    sites, lp, lm = _vertex_site_logp(instance, y)
    for idx in range(sites.size):
        s = sites[idx]
        if pinned is not None and pinned[s] != 0:
            log_mass += lp[idx] if pinned[s] > 0 else lm[idx]
            continue
        draws = np.where(rng.random(count) < math.exp(lp[idx]), 1, -1).astype(np.int8)
        sigma[:, s] = draws
        log_mass += np.where(draws > 0, lp[idx], lm[idx])
        # vertex factors are normalized: no contribution beyond their mass

    for li, lj, tab in _pair_factor_tables(instance, y):
        pi = 0 if pinned is None else int(pinned[li])
        pj = 0 if pinned is None else int(pinned[lj])
        if pi and pj:
            log_mass += tab[(1 - pi) // 2, (1 - pj) // 2]
        elif pi and not pj:
            row = tab[(1 - pi) // 2]
            pplus = math.exp(row[0] - logsumexp(row))
            draws = np.where(rng.random(count) < pplus, 1, -1).astype(np.int8)
            sigma[:, lj] = draws
            log_mass += np.where(draws > 0, row[0], row[1])
        elif pj and not pi:
            col = tab[:, (1 - pj) // 2]
            pplus = math.exp(col[0] - logsumexp(col))
            draws = np.where(rng.random(count) < pplus, 1, -1).astype(np.int8)
            sigma[:, li] = draws
            log_mass += np.where(draws > 0, col[0], col[1])
        else:
            flat = tab.reshape(-1)
            cum = np.cumsum(np.exp(flat - logsumexp(flat)))
            cum[-1] = 1.0
            choice = np.searchsorted(cum, rng.random(count), side="right").clip(max=3)
            pair_signs = np.array([(1, 1), (1, -1), (-1, 1), (-1, -1)], dtype=np.int8)
            sigma[:, li] = pair_signs[choice, 0]
            sigma[:, lj] = pair_signs[choice, 1]
            log_mass += flat[choice]
    return sigma, log_mass


BAND_ENUM_LIMIT = 16


def _reference_log_mass_batch(instance: GadgetInstance, y, sigma: np.ndarray) -> np.ndarray:
    """log gamma_hat of full S assignments, vectorized over rows."""
    out = np.zeros(sigma.shape[0])
    sites, lp, lm = _vertex_site_logp(instance, y)
    for idx in range(sites.size):
        s = sites[idx]
        out += np.where(sigma[:, s] > 0, lp[idx], lm[idx])
    for li, lj, tab in _pair_factor_tables(instance, y):
        ii = ((1 - sigma[:, li].astype(np.int64)) // 2)
        jj = ((1 - sigma[:, lj].astype(np.int64)) // 2)
        out += tab[ii, jj]
    return out


def certified_band(instance: GadgetInstance, y, envelope: str = "auto"):
    """Certified (log_lo, log_hi) bounds on the reference weight.

    The weight of an S assignment is mu(sigma_S; y) / (Z_hat(y)
    gamma_hat(sigma_S)).  Proof-valid instances carry the analytic band
    +-m log(1+eps/(5m)); otherwise (experiment regime) the exact band is
    enumerated over S, which is what desk-scale instances allow.
    """
    if envelope == "proof" or (envelope == "auto" and instance.plan.proof_valid):
        k = instance.log_kappa()
        return -k, k
    if envelope not in ("auto", "exact"):
        raise ValueError(f"certified_band: unknown envelope {envelope!r}")
    y = np.asarray(y)
    key = ("band", y.tobytes())
    if key not in instance._sector_cache:
        s_total = instance.s_total
        if s_total > BAND_ENUM_LIMIT:
            raise InfeasibleError(
                "no certified weight envelope: instance is not proof-valid "
                f"and |S|={s_total} is too large to enumerate"
            )
        from .gadgets import exact_pinned_mass_batch
        from .ising import index_to_signs

        log_zhat = log_z_hat_product(instance, y)
        signs = index_to_signs(np.arange(1 << s_total, dtype=np.uint64), s_total)
        log_u = (exact_pinned_mass_batch(instance, signs, y) - log_zhat
                 - _reference_log_mass_batch(instance, y, signs))
        instance._sector_cache[key] = (float(log_u.min()), float(log_u.max()))
    return instance._sector_cache[key]


def _sample_s_matchings_free(instance: GadgetInstance, y, rng: RngStream, count: int):
    """Exact per-gadget S draws when there are no matching edges.

    Gadgets are independent; within one, draw the R magnetization sector
    from the exact slice weights (with the 2cosh site factors), then the S
    sites independently with the sector's tilt.  No rejection needed.
    """
    from .gadgets import _s_local_slices, log2cosh

    p = instance.plan
    consts = p.consts
    out = np.empty((count, instance.s_total), dtype=np.int8)
    slices = _s_local_slices(instance)
    for v in range(instance.m):
        r = p.r[v]
        sec = instance.gadget_sectors(v)
        ks, logterms = sec.sector_table(int(y[v]))
        probs = np.exp(logterms - sec.log_z(int(y[v])))
        cum = np.cumsum(probs)
        cum[-1] = max(cum[-1], 1.0)
        pick = np.searchsorted(cum, rng.random(count), side="right").clip(max=ks.size - 1)
        mag = (2.0 * ks[pick] - r) / r
        fields = instance.s_field_values(v)
        a = fields[None, :] + consts.beta * mag[:, None]
        p_plus = 1.0 / (1.0 + np.exp(-2.0 * a))
        out[:, slices[v]] = np.where(rng.random(p_plus.shape) < p_plus, 1, -1).astype(np.int8)
    return out


def sample_S_given_Y(instance: GadgetInstance, y, delta: float, rng: RngStream,
                     pinned=None, envelope: str = "auto", count: int | None = None,
                     max_tries: int = 100_000):
    """Exact draws of sigma_S from mu(sigma_S = . | Y = y, sigma_T pinned).

    Matching-free instances factor over gadgets and are sampled directly
    (acceptance 1).  Otherwise: independence rejection against the product
    reference with a certified envelope; a weight above the envelope aborts
    with the violating configuration (it means r_v is below the proof-valid
    regime while the proof envelope was claimed).  Accepted draws follow
    the target law exactly, which is within any delta > 0.  Returns one
    row, or a (count, |S|) array when count is given.
    """
    if delta <= 0:
        raise ValueError("sample_S_given_Y: delta must be positive")
    from .gadgets import exact_pinned_mass_batch

    y = np.asarray(y)
    want = 1 if count is None else int(count)
    if not instance.plan.edge_weights and pinned is None:
        out = _sample_s_matchings_free(instance, y, rng, want)
        return out[0] if count is None else out
    log_zhat = log_z_hat_product(instance, y)
    _, log_hi = certified_band(instance, y, envelope)
    rows = []
    have = 0
    tries = 0
    while have < want:
        tries += 1
        if tries > max_tries:
            raise RuntimeError("sample_S_given_Y: rejection failed to accept")
        batch = min(max(4 * (want - have), 32), 1 << 16)
        sigma, log_mass = _propose_s_batch(instance, y, rng, batch, pinned=pinned)
        log_u = exact_pinned_mass_batch(instance, sigma, y) - log_zhat - log_mass
        worst = float(log_u.max())
        if worst > log_hi + 1e-9:
            bad = sigma[int(np.argmax(log_u))]
            raise EnvelopeViolation(
                f"weight exp({worst:.6g}) exceeds envelope exp({log_hi:.6g}) "
                f"at sigma_S={bad.tolist()}, y={y.tolist()}"
            )
        accept = np.log(np.maximum(rng.random(batch), 1e-300)) < log_u - log_hi
        if accept.any():
            rows.append(sigma[accept])
            have += int(accept.sum())
    out = np.concatenate(rows, axis=0)[:want]
    return out[0] if count is None else out


def sample_R_given_S(instance: GadgetInstance, v: int, sigma_s, y_v: int,
                     delta: float, rng: RngStream, force_walk: bool = False):
    """Fill gadget v's R block given the full S assignment and its phase.

    Samples the magnetization sector from the exact slice weights, then a
    uniform k-subset (the conditional field is uniform across the block, so
    the tilted subset law is uniform).  With force_walk the subset is drawn
    by the down-up chain instead (cross-check path).
    """
    if delta <= 0:
        raise ValueError("sample_R_given_S: delta must be positive")
    p = instance.plan
    r = p.r[v]
    if r > CONFIG_SIZE_LIMIT:
        raise ValueError("sample_R_given_S: R block too large to materialize")
    sigma_s = np.asarray(sigma_s)
    if sigma_s.shape != (instance.s_total,):
        raise ValueError("sample_R_given_S: sigma_S must cover all of S")
    from .gadgets import _s_local_slices, pinned_sector_table

    block = sigma_s[_s_local_slices(instance)[v]].astype(np.float64)
    m_s = int(round(block.sum()))
    h_prime = (p.beta / r) * m_s
    ks, logterms, log_total = pinned_sector_table(p.consts, r, h_prime, int(y_v))
    probs = np.exp(logterms - log_total)
    probs = probs / probs.sum()
    k = int(ks[np.searchsorted(np.cumsum(probs), rng.random(), side="right").clip(max=ks.size - 1)])

    if force_walk:
        if r > DOWNUP_R_LIMIT:
            raise ValueError("sample_R_given_S: walk path restricted to small r")
        signs = np.full(r, -1, dtype=np.int8)
        if k == 0:
            return signs
        if k == r:
            return -signs
        weights = np.full(r, math.exp(2.0 * h_prime) if abs(h_prime) < 300 else 1.0)
        steps = downup_mixing_steps(r, delta)
        subset = down_up_walk(weights, k, steps, rng)
        signs[subset] = 1
        return signs
    return _uniform_subset_signs(r, k, rng)


def sample_conditional_on_phase(instance: GadgetInstance, y, delta: float, rng: RngStream):
    """Full configuration from mu( . | Y = y): S stage then per-gadget R fill.

    The delta budget is split evenly between the two stages (both stages
    here are exact, so the budget is honored with room to spare).
    phase_readout of the output equals y surely.
    """
    return sample_conditional_on_phase_batch(instance, y, delta, rng, 1)[0]


def sample_conditional_on_phase_batch(instance: GadgetInstance, y, delta: float,
                                      rng: RngStream, count: int) -> np.ndarray:
    """(count, N) i.i.d. conditional-on-phase configurations.

    Batched for desk-scale instances; R subsets are drawn via per-row
    uniform-subset selection when r is small, falling back to the
    single-draw distinct-index sampler for huge blocks.
    """
    y = np.asarray(y)
    if instance.N > CONFIG_SIZE_LIMIT:
        raise ValueError("sample_conditional_on_phase: N too large to materialize")
    from .gadgets import _s_local_slices, pinned_sector_table

    p = instance.plan
    sigma_s = sample_S_given_Y(instance, y, delta / 2.0, rng, count=count)
    out = np.empty((count, instance.N), dtype=np.int8)
    slices = _s_local_slices(instance)
    for v in range(instance.m):
        a, b = instance.s_range(v)
        out[:, a:b] = sigma_s[:, slices[v]]
        r0, r1 = instance.r_range(v)
        r = p.r[v]
        m_s = np.rint(sigma_s[:, slices[v]].sum(axis=1)).astype(np.int64)
        ks_drawn = np.empty(count, dtype=np.int64)
        for ms in np.unique(m_s):
            rows = np.flatnonzero(m_s == ms)
            h_prime = (p.beta / r) * int(ms)
            ks, logterms, log_total = pinned_sector_table(p.consts, r, h_prime, int(y[v]))
            cum = np.cumsum(np.exp(logterms - log_total))
            cum[-1] = max(cum[-1], 1.0)
            pick = np.searchsorted(cum, rng.random(rows.size), side="right").clip(max=ks.size - 1)
            ks_drawn[rows] = ks[pick]
        if r <= 1 << 13:
            # top-k of per-row uniforms is a uniform k-subset
            u = rng.random((count, r))
            order = np.argsort(u, axis=1)
            ranks = np.empty_like(order)
            np.put_along_axis(ranks, order, np.arange(r)[None, :].repeat(count, 0), axis=1)
            out[:, r0:r1] = np.where(ranks < ks_drawn[:, None], 1, -1).astype(np.int8)
        else:
            for i in range(count):
                out[i, r0:r1] = _uniform_subset_signs(r, int(ks_drawn[i]), rng)
    return out


def _uniform_subset_signs(r: int, k: int, rng: RngStream) -> np.ndarray:
    signs = np.full(r, -1, dtype=np.int8)
    if k <= r - k:
        signs[sample_distinct(rng, r, k)] = 1
    else:
        signs[:] = 1
        signs[sample_distinct(rng, r, r - k)] = -1
    return signs


# ---------------------------------------------------------------------------
# Partition-function estimators.


def js_count(nu_log, cond_sampler, n: int, eps: float, delta: float, rng: RngStream,
             samples_per_step: int | None = None, repetitions: int | None = None) -> EstimateResult:
    """Counting-from-sampling along a greedy conditioning path.

    Builds x* coordinate by coordinate (argmax of an empirical conditional
    with t = ceil(128 n / eps^2) samples per step), estimates each step
    probability W_k with fresh samples, and returns nu(x*) / prod W_k.
    The whole procedure is repeated and the median taken, amplifying the
    constant success probability to 1 - delta.

    cond_sampler(prefix, count, rng) must return a (count, n - len(prefix))
    array of +-1 suffixes from the target conditioned on the prefix.
    samples_per_step / repetitions override the contract values (stress
    experiments only; the stated guarantee needs the defaults).
    """
    if not 0.0 < eps < 1.0 or not 0.0 < delta < 1.0:
        raise ValueError("js_count: eps and delta must lie in (0,1)")
    t = int(math.ceil(128.0 * n / eps**2)) if samples_per_step is None else int(samples_per_step)
    reps = (2 * math.ceil(4.0 * math.log(1.0 / delta)) + 1) if repetitions is None else int(repetitions)

    def one_batch():
        prefix = np.empty(0, dtype=np.int8)
        for _ in range(n):
            suffix = cond_sampler(prefix, t, rng)
            frac_plus = float(np.mean(suffix[:, 0] > 0))
            bit = 1 if frac_plus >= 0.5 else -1
            prefix = np.append(prefix, np.int8(bit))
        log_w = 0.0
        for k in range(n):
            tk = t
            while True:
                suffix = cond_sampler(prefix[:k], tk, rng)
                w_k = float(np.mean(suffix[:, 0] == prefix[k]))
                if w_k > 0.0:
                    break
                tk *= 2
                logging.getLogger(__name__).warning(
                    "js_count: degenerate step estimate at coordinate %d, retrying with t=%d", k, tk)
                if tk > 1 << 26:
                    raise RuntimeError("js_count: conditional estimate stuck at zero")
            log_w += math.log(w_k)
        return nu_log(prefix) - log_w

    estimates = sorted(one_batch() for _ in range(reps))
    return EstimateResult(
        log_value=estimates[len(estimates) // 2],
        epsilon=eps, delta=delta, repetitions=reps,
    )


def importance_Z_ising(model, eps: float, delta: float, rng: RngStream,
                       max_samples: int | None = None) -> EstimateResult:
    """Importance estimate of a plain Ising partition function.

    Proposal: independent spins tilted by the field, q(s) ~ exp(h.s); the
    weight exp(0.5 s.J.s) is bounded by the certified envelope
    exp(0.5 sum|J_ij|), giving the Hoeffding count
    ceil(kappa^4/(2 eps^2) ln(2/delta)).  Z = prod 2cosh(h_i) * E_q[w].
    """
    from .gadgets import log2cosh

    if not 0.0 < eps < 1.0 or not 0.0 < delta < 1.0:
        raise ValueError("importance_Z_ising: eps and delta must lie in (0,1)")
    J, h = model.J, model.h
    n = model.n
    log_c = 0.5 * float(np.abs(J).sum())
    kappa = math.exp(log_c)
    count = int(math.ceil(kappa**4 / (2.0 * eps**2) * math.log(2.0 / delta)))
    if max_samples is not None:
        count = min(count, int(max_samples))
    p_plus = 1.0 / (1.0 + np.exp(-2.0 * h))
    log_weights = np.empty(count)
    done = 0
    while done < count:
        batch = min(count - done, 1 << 15)
        signs = np.where(rng.random((batch, n)) < p_plus[None, :], 1.0, -1.0)
        log_weights[done:done + batch] = 0.5 * np.einsum("bi,ij,bj->b", signs, J, signs)
        done += batch
    log_mean = float(logsumexp(log_weights) - math.log(count))
    return EstimateResult(
        log_value=float(np.sum(log2cosh(h))) + log_mean,
        epsilon=eps, delta=delta, repetitions=count,
    )


def estimate_Z_phase(instance: GadgetInstance, y, eps: float, delta: float,
                     rng: RngStream, method: str = "importance",
                     max_samples: int | None = None) -> EstimateResult:
    """Estimate Z(y), the instance's unnormalized mass at phase vector y.

    Importance path (default): weights of product-reference draws against
    the exact pinned mass are certified to lie in [1/kappa, kappa] with
    kappa = (1+eps/(5m))^m, so a Hoeffding sample count of
    ceil(kappa^4 / (2 eps^2) ln(2/delta)) gives a (1 +- eps) estimate with
    probability 1 - delta.  Matching-free instances short-circuit to the
    exact per-gadget product.  The js path runs the greedy
    counting-from-sampling reduction against the exact pinned-mass oracle.
    """
    if not 0.0 < eps < 1.0 or not 0.0 < delta < 1.0:
        raise ValueError("estimate_Z_phase: eps and delta must lie in (0,1)")
    y = np.asarray(y)
    if not instance.plan.edge_weights:
        return EstimateResult(log_value=log_z_hat_product(instance, y),
                              epsilon=0.0, delta=0.0, repetitions=0)
    if method == "js":
        return _estimate_z_js(instance, y, eps, delta, rng)
    if method != "importance":
        raise ValueError(f"estimate_Z_phase: unknown method {method!r}")

    from .gadgets import approx_pinned_mass, exact_pinned_mass_batch

    log_zhat = log_z_hat_product(instance, y)
    log_lo, log_hi = certified_band(instance, y)
    kappa = math.exp(max(log_hi, -log_lo))
    count = int(math.ceil(kappa**4 / (2.0 * eps**2) * math.log(2.0 / delta)))
    if max_samples is not None:
        count = min(count, int(max_samples))  # forfeits the stated guarantee
    log_weights = np.empty(count)
    done = 0
    while done < count:
        batch = min(count - done, 1 << 15)
        sigma, log_mass = _propose_s_batch(instance, y, rng, batch)
        log_u = exact_pinned_mass_batch(instance, sigma, y) - log_zhat - log_mass
        if log_u.max() > log_hi + 1e-9 or log_u.min() < log_lo - 1e-9:
            raise EnvelopeViolation(
                f"importance weight outside certified band "
                f"[exp({log_lo:.6g}), exp({log_hi:.6g})]"
            )
        log_weights[done:done + batch] = log_u
        done += batch
    log_gamma_tot, _ = approx_pinned_mass(instance, np.zeros(instance.s_total, dtype=np.int8), y)
    log_mean = float(logsumexp(log_weights) - math.log(count))
    return EstimateResult(
        log_value=log_zhat + log_gamma_tot + log_mean,
        epsilon=eps, delta=delta, repetitions=count,
    )


def _estimate_z_js(instance, y, eps, delta, rng):
    from .gadgets import exact_pinned_mass

    s_total = instance.s_total

    def nu_log(sigma_s):
        return exact_pinned_mass(instance, np.asarray(sigma_s, dtype=np.float64), y)

    def cond_sampler(prefix, count, rng_):
        prefix = np.asarray(prefix, dtype=np.int8)
        pin = np.zeros(s_total, dtype=np.int8)
        pin[: prefix.size] = prefix
        sig = sample_S_given_Y(instance, y, delta, rng_, pinned=pin, count=count)
        return sig[:, prefix.size:]

    res = js_count(nu_log, cond_sampler, s_total, eps, delta, rng)
    return EstimateResult(log_value=res.log_value, epsilon=eps, delta=delta,
                          repetitions=res.repetitions)


# ---------------------------------------------------------------------------
# Rejection reduction: phase-level stream -> gadget-level samples.


def rejection_reduce(y_stream, instance: GadgetInstance, k_tilde: int,
                     eps_js: float, delta: float, rng: RngStream,
                     mode: str = "real", exact_z=None, max_samples: int | None = None,
                     materialize: bool = True):
    """Accept/reject a stream of phase vectors and lift acceptances.

    Real mode: per distinct y (cached), estimate Z(y), accept with
    min(Z_hat / ((1+eps_js)(1+eps) A mu(y)), 1), then draw a conditional
    configuration.  Ideal mode uses the supplied exact_z(y) -> log Z(y)
    and the (1+eps) A mu(y) denominator.  Returns (list of configurations,
    acceptance log rows).  With materialize=False the accepted phase
    vectors are returned instead of full configurations (acceptance-rate
    studies on instances too large to hold a configuration).
    """
    if mode not in ("real", "ideal"):
        raise ValueError(f"rejection_reduce: unknown mode {mode!r}")
    if mode == "ideal" and exact_z is None:
        raise ValueError("rejection_reduce: ideal mode needs exact_z")
    eps = instance.plan.eps
    _, _, log_a = normalization_A(instance)
    cache: dict = {}
    log_rows = []
    accepted = []
    consumed = 0
    for y in y_stream:
        y = np.asarray(y, dtype=np.int8)
        consumed += 1
        key = y.tobytes()
        if key not in cache:
            if mode == "real":
                cache[key] = estimate_Z_phase(instance, y, eps_js, delta, rng,
                                              max_samples=max_samples).log_value
            else:
                cache[key] = float(exact_z(y))
        log_zy = cache[key]
        log_thresh = log_a + log_mu_source(instance, y) + math.log1p(eps)
        if mode == "real":
            log_thresh += math.log1p(eps_js)
        log_p = min(0.0, log_zy - log_thresh)
        accept = math.log(max(rng.random(), 1e-300)) < log_p
        log_rows.append({
            "index": consumed - 1,
            "y_hash": hashlib.sha256(key).hexdigest()[:16],
            "accepted": int(accept),
            "log_z_hat": log_zy,
            "log_threshold": log_thresh,
        })
        if accept:
            if materialize:
                accepted.append(sample_conditional_on_phase(instance, y, delta, rng))
            else:
                accepted.append(y.copy())
            if len(accepted) == k_tilde:
                return accepted, log_rows
    raise StreamShortfall(
        f"stream exhausted after {consumed} draws with "
        f"{len(accepted)}/{k_tilde} acceptances",
        accepted=accepted, consumed=consumed,
    )


def acceptance_log_to_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["index", "y_hash", "accepted", "log_z_hat", "log_threshold"])
        writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# Sample files: b"HISN1" magic, uint64 N, uint64 count, bit-packed rows.


def write_sample_file(path, n: int, configs) -> int:
    """Write +-1 configurations bit-packed (bit 1 <-> +1, little-endian)."""
    rows = list(configs)
    with open(path, "wb") as fh:
        fh.write(b"HISN1")
        fh.write(np.uint64(n).tobytes())
        fh.write(np.uint64(len(rows)).tobytes())
        for row in rows:
            row = np.asarray(row)
            if row.shape != (n,):
                raise ValueError("write_sample_file: row length mismatch")
            fh.write(np.packbits((row > 0).astype(np.uint8), bitorder="little").tobytes())
    return len(rows)


def read_sample_file(path):
    """(n, configs) with configs an int8 array of shape (count, n)."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != b"HISN1":
            raise ValueError(f"read_sample_file: bad magic {magic!r}")
        n = int(np.frombuffer(fh.read(8), dtype=np.uint64)[0])
        count = int(np.frombuffer(fh.read(8), dtype=np.uint64)[0])
        row_bytes = (n + 7) // 8
        out = np.empty((count, n), dtype=np.int8)
        for i in range(count):
            packed = np.frombuffer(fh.read(row_bytes), dtype=np.uint8)
            out[i] = np.unpackbits(packed, count=n, bitorder="little").astype(np.int8) * 2 - 1
    return n, out
