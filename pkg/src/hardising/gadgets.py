"""Near-critical phase-gadget transformation of an Ising model.

Each original vertex v becomes a gadget: a block R_v of r_v sites carrying
the two-phase bulk (complete graph of weight beta/r_v, self-loops included),
t0_v field sites encoding h_v, and per-neighbor site groups matched across
gadgets to encode J_uv.  The sign of the R_v magnetization is the gadget's
phase; the phase vector of a sample approximately follows the original
model.

Sector sums (partition-function slices at fixed R-block magnetization) are
the exact computational primitive.  For small r every slice is evaluated;
for proof-valid r (millions to billions) the sums are windowed around the
dominant magnetization with a certified-negligible truncation remainder,
relying on the unimodality of the per-slice log mass on each half-space.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .ising import IsingModel, SizeGuardError, dump_json
from .scalars import BetaConstants, choose_delta_r, f1, f_beta, next_odd, solve_q_plus

FULL_SECTOR_LIMIT = 1 << 22      # evaluate every slice below this r
SECTOR_R_LIMIT = 10**11          # lgamma differences degrade beyond this
DENSE_EXPORT_LIMIT = 4000
EDGE_DROP = 80.0                 # window edge must sit this far under the peak
BOUNDARY_WIDTH = 1024


class InfeasibleError(RuntimeError):
    """Raised when an exact computation is out of numeric or memory range."""


def log2cosh(x):
    x = np.abs(x)
    return x + np.log1p(np.exp(-2.0 * x))


@dataclass(frozen=True)
class GadgetPlan:
    """Deterministic sizing of the gadget construction for one source model."""

    source: IsingModel
    gamma: float
    gamma_tilde: float
    beta: float
    eps: float
    consts: BetaConstants
    t0: tuple                    # per-vertex field-site counts
    edge_sizes: dict             # (u,v) u<v -> e_uv
    h_tilde: tuple               # per-vertex site field
    edge_weights: dict           # (u,v) u<v -> matched-pair weight
    r: tuple                     # per-vertex R sizes (odd python ints)
    delta: tuple                 # per-vertex window half-widths from the rule
    r_required: tuple            # distributional lower bounds
    r_floor: tuple               # spectral lower bounds used
    r_scale: float
    zero_diagonal: bool
    proof_valid: bool

    @property
    def m(self) -> int:
        return self.source.n

    def neighbors(self, v: int) -> list:
        if "_adj" not in self.__dict__:
            adj = {u: [] for u in range(self.m)}
            for a, b in self.edge_sizes:
                adj[a].append(b)
                adj[b].append(a)
            object.__setattr__(self, "_adj", {u: sorted(vs) for u, vs in adj.items()})
        return self._adj[v]

    def t(self, v: int) -> int:
        return self.t0[v] + sum(self.edge_sizes[_key(u, v)] for u in self.neighbors(v))

    def delta_eff(self, v: int) -> float:
        """Window half-width actually used by the reference constant a_v.

        Proof-valid r leaves the rule's delta untouched (it always exceeds
        the fluctuation scale there).  Overridden small r widens the window
        to the magnetization fluctuation scale 1/sqrt(r C1) so the window
        keeps a constant fraction of the local mass, and never below the
        slice spacing.
        """
        r = self.r[v]
        return max(self.delta[v], 1.0 / math.sqrt(r * self.consts.C1), 1.5 / r)


def _key(u: int, v: int) -> tuple:
    return (u, v) if u < v else (v, u)


def plan(H: IsingModel, gamma: float, eps: float, r_scale: float = 1.0,
         r_override=None, zero_diagonal: bool = False) -> GadgetPlan:
    """Size every gadget for the target spectral band (1, gamma].

    Field sites per vertex: t0_v = max(ceil(2|h_v|/(2q+-1)), 1); matched
    sites per edge: e_uv = max(ceil(max(2, 1/tanh((g-1)/8)) |J_uv|
    /(2q+-1)^2), 1); site values through the inverse weight maps.  r_v is
    the smallest odd integer above both the distributional bound (the
    single-gadget rule at accuracy eps/(5m)) and the spectral floor.
    `r_scale` multiplies the distributional bound only; `r_override` forces
    r_v outright (experiments below the proof-valid regime).
    """
    if gamma <= 1.0:
        raise ValueError(f"plan: gamma={gamma} must exceed 1")
    if not 0.0 < eps <= 0.05:
        raise ValueError(f"plan: eps={eps} outside (0, 0.05]")
    gamma_tilde = min(gamma, 2.0)
    beta = 0.5 * (1.0 + gamma_tilde)
    consts = solve_q_plus(beta)
    gap = consts.gap
    m = H.n
    J = H.J.copy()
    np.fill_diagonal(J, 0.0)  # diagonal never changes the law; drop it here
    h = H.h

    t0 = tuple(max(math.ceil(2.0 * abs(hv) / gap), 1) for hv in h)
    ce = max(2.0, 1.0 / math.tanh((gamma_tilde - 1.0) / 8.0))
    edge_sizes, edge_weights, h_tilde = {}, {}, []
    for v in range(m):
        ratio = h[v] / t0[v]
        assert abs(math.tanh(ratio)) <= gap / 2.0 + 1e-12
        h_tilde.append(_phi_vertex_inv(consts, ratio))
    for u in range(m):
        for v in range(u + 1, m):
            if J[u, v] != 0.0:
                e = max(math.ceil(ce * abs(J[u, v]) / gap**2), 1)
                edge_sizes[(u, v)] = e
                ratio = J[u, v] / e
                assert abs(math.tanh(ratio)) <= gap**2 / 2.0 + 1e-12
                edge_weights[(u, v)] = _phi_edge_inv(consts, ratio)

    eps0 = eps / (5.0 * m)
    t_of = [t0[v] + sum(edge_sizes[_key(u, v)]
                        for u in range(m) if u != v and _key(u, v) in edge_sizes)
            for v in range(m)]
    deltas, r_req, r_floor, r_final = [], [], [], []
    for v in range(m):
        tv = t_of[v]
        dl, rr = choose_delta_r(consts, tv, eps0)
        if zero_diagonal:
            floor = max(tv, math.ceil(16.0 * beta * (tv + 1) / (gamma_tilde - 1.0)))
        else:
            floor = max(tv, math.ceil(8.0 * beta * tv / (gamma_tilde - 1.0)))
        deltas.append(dl)
        r_req.append(rr)
        r_floor.append(floor)
        if r_override is not None:
            ov = r_override if np.isscalar(r_override) else r_override[v]
            r_final.append(next_odd(ov))
        else:
            r_final.append(next_odd(max(r_scale * rr, floor)))
    proof_valid = all(r_final[v] >= max(r_req[v], r_floor[v]) for v in range(m))

    src = IsingModel(J=J, h=h, meta=dict(H.meta))
    return GadgetPlan(
        source=src, gamma=gamma, gamma_tilde=gamma_tilde, beta=beta, eps=eps,
        consts=consts, t0=t0, edge_sizes=edge_sizes, h_tilde=tuple(h_tilde),
        edge_weights=edge_weights, r=tuple(r_final), delta=tuple(deltas),
        r_required=tuple(r_req), r_floor=tuple(r_floor), r_scale=r_scale,
        zero_diagonal=zero_diagonal, proof_valid=proof_valid,
    )


def _phi_vertex_inv(consts, x):
    return math.atanh(math.tanh(x) / consts.gap)


def _phi_edge_inv(consts, x):
    return math.atanh(math.tanh(x) / consts.gap**2)


# ---------------------------------------------------------------------------
# Sector sums.


@dataclass(frozen=True)
class SectorSums:
    """Half-space decomposition of one gadget's partition function.

    ks / log_z_k list the retained magnetization slices (all of them when r
    is small, a certified window otherwise); the totals split the slices by
    phase.  log_a is the field-free window sum against exp(r f(q+)), and
    lambda_+/- the product reference values, so Z^y ~ a * lambda_y.
    """

    r: int
    ks_plus: np.ndarray
    log_z_k_plus: np.ndarray
    ks_minus: np.ndarray
    log_z_k_minus: np.ndarray
    log_z_plus: float
    log_z_minus: float
    log_a: float
    log_lambda_plus: float
    log_lambda_minus: float

    def log_z(self, y: int) -> float:
        return self.log_z_plus if y > 0 else self.log_z_minus

    def sector_table(self, y: int) -> tuple:
        if y > 0:
            return self.ks_plus, self.log_z_k_plus
        return self.ks_minus, self.log_z_k_minus


def _check_r(r: int):
    if r > SECTOR_R_LIMIT:
        raise InfeasibleError(
            f"sector sums infeasible at r={r:.3g} (> {SECTOR_R_LIMIT:.0e}): "
            "lgamma differences lose precision"
        )
    if r % 2 == 0:
        raise ValueError("sector sums: r must be odd")


def _interior_center(consts, r, slope_shift):
    """Peak slice of lnC + quadratic + linear field on the upper half.

    The continuous slope is f'(k/r) + 2*slope_shift, which crosses zero at
    most once on (alpha_plus, 1); returns None when the slope is already
    non-positive there (peak sits at the r/2 boundary).
    """
    beta = consts.beta
    lo, hi = consts.alpha_plus, 1.0 - 1e-12
    if f1(beta, lo) + 2.0 * slope_shift <= 0.0:
        return None
    if f1(beta, hi) + 2.0 * slope_shift >= 0.0:
        return r  # peak at the all-plus boundary
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if f1(beta, mid) + 2.0 * slope_shift > 0.0:
            lo = mid
        else:
            hi = mid
    return int(round(r * 0.5 * (lo + hi)))


def _windowed_half(r, term_fn, center):
    """(ks, logterms) covering the upper half with negligible remainder.

    Segments: both boundaries plus an interior window around `center`
    doubled until its edges fall EDGE_DROP + ln(r) under the running peak.
    The per-slice log mass is unimodal on the half, so every dropped slice
    is dominated by a retained segment edge.
    """
    half_lo = (r + 1) // 2
    half_hi = r
    count = half_hi - half_lo + 1
    if count <= FULL_SECTOR_LIMIT:
        ks = np.arange(half_lo, half_hi + 1, dtype=np.int64)
        return ks, term_fn(ks)

    drop = EDGE_DROP + math.log(r + 1.0)
    segments = [(half_lo, min(half_lo + BOUNDARY_WIDTH, half_hi)),
                (max(half_hi - BOUNDARY_WIDTH, half_lo), half_hi)]
    width = BOUNDARY_WIDTH
    if center is None:
        center = half_lo
    center = min(max(center, half_lo), half_hi)
    while True:
        lo = max(center - width, half_lo)
        hi = min(center + width, half_hi)
        segments_try = segments + [(lo, hi)]
        ks = _merge_segments(segments_try, half_lo, half_hi)
        terms = term_fn(ks)
        peak = float(np.max(terms))
        edge_ok = True
        if lo > half_lo and terms[np.searchsorted(ks, lo)] > peak - drop:
            edge_ok = False
        if hi < half_hi and terms[np.searchsorted(ks, hi)] > peak - drop:
            edge_ok = False
        if edge_ok or (lo == half_lo and hi == half_hi):
            return ks, terms
        width *= 4
        if width > 64 * FULL_SECTOR_LIMIT:
            raise InfeasibleError("sector window failed to close")


def _merge_segments(segments, lo, hi):
    segs = sorted((max(a, lo), min(b, hi)) for a, b in segments)
    merged = [segs[0]]
    for a, b in segs[1:]:
        if a <= merged[-1][1] + 1:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    return np.concatenate([np.arange(a, b + 1, dtype=np.int64) for a, b in merged])


def _log_binom(r, ks):
    return gammaln(r + 1.0) - gammaln(ks + 1.0) - gammaln(r - ks + 1.0)


def _gadget_term_fn(consts, r, field_groups):
    beta = consts.beta

    def fn(ks):
        ks_f = ks.astype(np.float64)
        mag = 2.0 * ks_f - r
        out = _log_binom(r, ks_f) + (beta / (2.0 * r)) * mag**2
        for value, cnt in field_groups:
            out += cnt * log2cosh(value + beta * mag / r)
        return out

    return fn


def sector_sums(consts: BetaConstants, r: int, s_fields, delta: float) -> SectorSums:
    """Exact (to float) sector decomposition of one gadget.

    s_fields holds the fields on the gadget's S sites; the R sites carry
    the complete-graph block with self-loops, so a slice with k plus-spins
    weighs C(r,k) exp(beta (2k-r)^2 / 2r) prod_S 2cosh(h_i + beta(2k-r)/r).
    `delta` is the window half-width defining the reference constant a.
    """
    _check_r(r)
    r = int(r)
    s_fields = np.asarray(s_fields, dtype=np.float64)
    values, counts = np.unique(s_fields, return_counts=True) if s_fields.size else (np.empty(0), np.empty(0))
    groups = list(zip(values, counts))
    beta, q = consts.beta, consts.q_plus

    fn_plus = _gadget_term_fn(consts, r, groups)
    ks_p, terms_p = _windowed_half(r, fn_plus, int(round(r * q)))
    # lower half by mirror symmetry k <-> r-k with negated fields
    fn_neg = _gadget_term_fn(consts, r, [(-v, c) for v, c in groups])
    ks_m_mirror, terms_m = _windowed_half(r, fn_neg, int(round(r * q)))
    ks_m = (r - ks_m_mirror)[::-1]
    terms_m = terms_m[::-1]

    log_fq = r * f_beta(beta, q)
    lam_p = log_fq + float(sum(c * log2cosh(v + beta * consts.gap) for v, c in groups))
    lam_m = log_fq + float(sum(c * log2cosh(v - beta * consts.gap) for v, c in groups))

    # field-free window sum for the reference constant a
    lo_k = max((r + 1) // 2, math.ceil(r * (q - delta)))
    hi_k = min(r, math.floor(r * (q + delta)))
    if lo_k > hi_k:
        raise ValueError(f"sector_sums: empty a-window at r={r}, delta={delta}")
    if hi_k - lo_k + 1 > 8 * FULL_SECTOR_LIMIT:
        ks_a = np.linspace(lo_k, hi_k, 8 * FULL_SECTOR_LIMIT).round().astype(np.int64)
        ks_a = np.unique(ks_a)
        raise InfeasibleError(f"a-window too wide at r={r}")
    ks_a = np.arange(lo_k, hi_k + 1, dtype=np.int64)
    mag_a = 2.0 * ks_a.astype(np.float64) - r
    log_a = float(logsumexp(_log_binom(r, ks_a.astype(np.float64)) + (beta / (2.0 * r)) * mag_a**2)) - log_fq

    return SectorSums(
        r=r,
        ks_plus=ks_p, log_z_k_plus=terms_p,
        ks_minus=ks_m, log_z_k_minus=terms_m,
        log_z_plus=float(logsumexp(terms_p)),
        log_z_minus=float(logsumexp(terms_m)),
        log_a=log_a,
        log_lambda_plus=lam_p,
        log_lambda_minus=lam_m,
    )


def pinned_sector_table(consts: BetaConstants, r: int, h_prime: float, y: int):
    """(ks, logterms, log_total) of the R block pinned to uniform field h'.

    Slice weight: C(r,k) exp(beta (2k-r)^2 / 2r + (2k-r) h'), restricted to
    the half selected by the phase y.
    """
    _check_r(r)
    r = int(r)
    beta = consts.beta

    def make_fn(shift):
        def fn(ks):
            ks_f = ks.astype(np.float64)
            mag = 2.0 * ks_f - r
            return _log_binom(r, ks_f) + (beta / (2.0 * r)) * mag**2 + mag * shift
        return fn

    if y > 0:
        center = _interior_center(consts, r, h_prime)
        ks, terms = _windowed_half(r, make_fn(h_prime), center)
    else:
        center = _interior_center(consts, r, -h_prime)
        ks_mirror, terms = _windowed_half(r, make_fn(-h_prime), center)
        ks = (r - ks_mirror)[::-1]
        terms = terms[::-1]
    return ks, terms, float(logsumexp(terms))


# ---------------------------------------------------------------------------
# Materialized instances.


@dataclass
class GadgetInstance:
    """Structured near-critical instance: per-gadget rank-one blocks plus
    matching edges.  Vertices are laid out gadget by gadget as
    [S_vertex | S_edge grouped by neighbor ascending | R]."""

    plan: GadgetPlan
    zero_diagonal: bool
    _sector_cache: dict = field(default_factory=dict, repr=False)
    _norm_cache: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        p = self.plan
        m = p.m
        starts, s_sizes = [], []
        pos = 0
        for v in range(m):
            starts.append(pos)
            s_sizes.append(p.t(v))
            pos += s_sizes[v] + p.r[v]
        self.gadget_start = starts
        self.s_sizes = s_sizes
        self.N = pos
        # edge block offsets inside each gadget's S region
        self.edge_block = {}
        for v in range(m):
            off = starts[v] + p.t0[v]
            for u in p.neighbors(v):
                self.edge_block[(v, u)] = off
                off += p.edge_sizes[_key(u, v)]

    # --- layout ---

    @property
    def m(self) -> int:
        return self.plan.m

    def s_range(self, v: int) -> tuple:
        s = self.gadget_start[v]
        return s, s + self.s_sizes[v]

    def r_range(self, v: int) -> tuple:
        s = self.gadget_start[v]
        return s + self.s_sizes[v], s + self.s_sizes[v] + self.plan.r[v]

    def s_vertex_range(self, v: int) -> tuple:
        s = self.gadget_start[v]
        return s, s + self.plan.t0[v]

    def matching_pairs(self, u: int, v: int):
        """Global index pairs of the perfect matching for edge {u,v}."""
        u, v = _key(u, v)
        e = self.plan.edge_sizes[(u, v)]
        a = self.edge_block[(u, v)]
        b = self.edge_block[(v, u)]
        return [(a + i, b + i) for i in range(e)]

    @property
    def s_total(self) -> int:
        return sum(self.s_sizes)

    def s_global_indices(self) -> np.ndarray:
        """Global vertex indices of all of S, in per-gadget layout order."""
        idx = []
        for v in range(self.m):
            a, b = self.s_range(v)
            idx.extend(range(a, b))
        return np.asarray(idx, dtype=np.int64)

    def s_field_values(self, v: int) -> np.ndarray:
        """Site fields on gadget v's S block, layout order."""
        p = self.plan
        return np.concatenate([
            np.full(p.t0[v], p.h_tilde[v]),
            np.zeros(self.s_sizes[v] - p.t0[v]),
        ])

    @property
    def log_self_loop_offset(self) -> float:
        """Per-instance constant separating self-loop and zero-diagonal energies."""
        return -0.5 * self.plan.beta * self.m if self.zero_diagonal else 0.0

    # --- dense / operator views ---

    def dense_export(self) -> IsingModel:
        if self.N > DENSE_EXPORT_LIMIT:
            raise SizeGuardError(f"dense_export: N={self.N} exceeds {DENSE_EXPORT_LIMIT}")
        p = self.plan
        J = np.zeros((self.N, self.N))
        h = np.zeros(self.N)
        for v in range(p.m):
            s0, s1 = self.s_range(v)
            g0 = self.gadget_start[v]
            g1 = g0 + self.s_sizes[v] + p.r[v]
            w = p.beta / p.r[v]
            J[g0:g1, g0:g1] += w
            J[s0:s1, s0:s1] -= w
            a, b = self.s_vertex_range(v)
            h[a:b] = p.h_tilde[v]
        for (u, v), wt in p.edge_weights.items():
            for i, j in self.matching_pairs(u, v):
                J[i, j] += wt
                J[j, i] += wt
        if self.zero_diagonal:
            np.fill_diagonal(J, 0.0)
        return IsingModel(J=J, h=h, meta={"kind": "gadget-instance", "beta": p.beta,
                                          "gamma": p.gamma, "zero_diagonal": self.zero_diagonal})

    def matvec(self, x: np.ndarray) -> np.ndarray:
        p = self.plan
        out = np.zeros_like(x, dtype=np.float64)
        for v in range(p.m):
            g0 = self.gadget_start[v]
            g1 = g0 + self.s_sizes[v] + p.r[v]
            s0, s1 = self.s_range(v)
            w = p.beta / p.r[v]
            out[g0:g1] += w * x[g0:g1].sum()
            out[s0:s1] -= w * x[s0:s1].sum()
            if self.zero_diagonal:
                r0, r1 = self.r_range(v)
                out[r0:r1] -= w * x[r0:r1]
        for (u, v), wt in p.edge_weights.items():
            for i, j in self.matching_pairs(u, v):
                out[i] += wt * x[j]
                out[j] += wt * x[i]
        return out

    def width(self) -> float:
        """Exact row-mass width from the structure."""
        p = self.plan
        best = 0.0
        for v in range(p.m):
            w = p.beta / p.r[v]
            row_r = (self.s_sizes[v] + p.r[v] - 1) * w
            best = max(best, row_r)
            row_s = p.r[v] * w + abs(p.h_tilde[v])
            best = max(best, row_s)
            for u in p.neighbors(v):
                best = max(best, p.r[v] * w + abs(p.edge_weights[_key(u, v)]))
        return best

    def spectral_width(self) -> float:
        from .ising import extremal_eigenvalues, spectral_width as sw
        if self.N <= 2000:
            return sw(self.dense_export())
        if self.N > 1 << 24:
            raise InfeasibleError(
                f"spectral_width: N={self.N:.3g} too large for an eigensolve; "
                "use spectral_interval()"
            )
        lo, hi = extremal_eigenvalues(self.matvec, self.N)
        return hi - lo

    def spectral_interval(self) -> tuple:
        """Certified [lo, hi] containing the spectral width, O(m) to compute.

        A gadget block has nonzero eigenvalues (beta/r)(r +- sqrt(r^2+4tr))/2,
        so its width is beta sqrt(1+4t/r); the matching edges perturb by at
        most twice their largest weight (one nonzero per row), and dropping
        the diagonal by at most 2 beta/r more.
        """
        p = self.plan
        base = max(p.beta * math.sqrt(1.0 + 4.0 * self.s_sizes[v] / p.r[v])
                   for v in range(p.m))
        slack = 2.0 * max((abs(w) for w in p.edge_weights.values()), default=0.0)
        if self.zero_diagonal:
            slack += 2.0 * max(p.beta / p.r[v] for v in range(p.m))
        return base - slack, base + slack

    # --- energies and phases ---

    def energy(self, signs: np.ndarray) -> float:
        """0.5 s.J.s + h.s via per-block magnetizations, O(N)."""
        p = self.plan
        signs = np.asarray(signs, dtype=np.float64)
        total = 0.0
        for v in range(p.m):
            g0 = self.gadget_start[v]
            g1 = g0 + self.s_sizes[v] + p.r[v]
            s0, s1 = self.s_range(v)
            mw = signs[g0:g1].sum()
            ms = signs[s0:s1].sum()
            total += 0.5 * (p.beta / p.r[v]) * (mw * mw - ms * ms)
            a, b = self.s_vertex_range(v)
            total += p.h_tilde[v] * signs[a:b].sum()
        for (u, v), wt in p.edge_weights.items():
            for i, j in self.matching_pairs(u, v):
                total += wt * signs[i] * signs[j]
        return float(total + self.log_self_loop_offset)

    def phase_readout(self, signs: np.ndarray) -> np.ndarray:
        """Per-gadget sign of the R-block magnetization (never zero: r odd)."""
        signs = np.asarray(signs)
        if signs.shape != (self.N,):
            raise ValueError("phase_readout: length mismatch")
        out = np.empty(self.m, dtype=np.int8)
        for v in range(self.m):
            r0, r1 = self.r_range(v)
            out[v] = 1 if signs[r0:r1].sum() > 0 else -1
        return out

    def phase_codes(self, indices: np.ndarray) -> np.ndarray:
        """Vectorized phase readout on config indices (brute-force pushforward)."""
        from .ising import index_to_signs
        signs = index_to_signs(indices, self.N)
        codes = np.zeros(indices.shape[0], dtype=np.int64)
        for v in range(self.m):
            r0, r1 = self.r_range(v)
            plus = signs[:, r0:r1].sum(axis=1) > 0
            codes |= plus.astype(np.int64) << v
        return codes

    # --- sector machinery ---

    def gadget_sectors(self, v: int) -> SectorSums:
        if v not in self._sector_cache:
            p = self.plan
            self._sector_cache[v] = sector_sums(
                p.consts, p.r[v], self.s_field_values(v), p.delta_eff(v))
        return self._sector_cache[v]

    def pinned_log_z(self, v: int, m_s: int, y: int) -> float:
        """Memoized half-space total of R_v pinned to S magnetization m_s."""
        key = ("pin", v, int(m_s), int(y))
        if key not in self._sector_cache:
            p = self.plan
            h_prime = (p.beta / p.r[v]) * m_s
            _, _, log_zv = pinned_sector_table(p.consts, p.r[v], h_prime, y)
            self._sector_cache[key] = log_zv
        return self._sector_cache[key]

    def log_kappa(self) -> float:
        """Certified log envelope ratio: m*log(1+eps/(5m))."""
        return self.m * math.log1p(self.plan.eps / (5.0 * self.plan.m))

    def to_json(self) -> str:
        p = self.plan
        feasible = max(p.r) <= SECTOR_R_LIMIT
        logs = {}
        if feasible:
            try:
                a0, a1, _ = normalization_A(self)
                logs = {"logA0": a0, "logA1": a1}
            except InfeasibleError:
                feasible = False
        if not feasible:
            logs = {"logA0": None, "logA1": None}
        vertices = []
        for v in range(p.m):
            vertices.append({
                "id": v, "t0": p.t0[v], "r": p.r[v], "h_tilde": p.h_tilde[v],
                "blocks": [{"to": u, "e": p.edge_sizes[_key(u, v)],
                            "w": p.edge_weights[_key(u, v)]} for u in p.neighbors(v)],
            })
        from .ising import model_to_json
        src_text = model_to_json(p.source)
        src_hash = hashlib.sha256(src_text.encode()).hexdigest()
        return dump_json({
            "version": 1, "beta": p.beta, "gamma": p.gamma, "epsilon": p.eps,
            **logs,
            "vertices": vertices,
            "layout": {"gadget_start": list(self.gadget_start), "N": self.N},
            "source": json.loads(src_text),
            "provenance": src_hash,
            "proof_valid": p.proof_valid,
            "zero_diagonal": self.zero_diagonal,
            "spectral_interval": list(self.spectral_interval()),
        })


def materialize(p: GadgetPlan, zero_diagonal: bool | None = None) -> GadgetInstance:
    """Lay out the planned gadgets; O(m^2) regardless of N."""
    if zero_diagonal is None:
        zero_diagonal = p.zero_diagonal
    return GadgetInstance(plan=p, zero_diagonal=zero_diagonal)


# ---------------------------------------------------------------------------
# Normalization and pinned masses.


def normalization_A(instance: GadgetInstance):
    """(log A0, log A1, log A): per-gadget and per-edge reference factors.

    A0 multiplies a_v sqrt(lambda_+ lambda_-) over gadgets; A1 multiplies
    sqrt(Psi_+ Psi_-) over matched edges; Z(y) ~ (1 +- eps) A mu_H(y).
    """
    if instance._norm_cache is not None:
        return instance._norm_cache
    p = instance.plan
    log_a0 = instance.log_self_loop_offset
    for v in range(p.m):
        sec = instance.gadget_sectors(v)
        log_a0 += sec.log_a + 0.5 * (sec.log_lambda_plus + sec.log_lambda_minus)
    q, qm = p.consts.q_plus, p.consts.q_minus
    la = math.log(q * q + qm * qm)
    lb = math.log(2.0 * q * qm)
    log_a1 = 0.0
    for (u, v), wt in p.edge_weights.items():
        e = p.edge_sizes[(u, v)]
        psi_p = np.logaddexp(la + wt, lb - wt)
        psi_m = np.logaddexp(lb + wt, la - wt)
        log_a1 += e * 0.5 * (psi_p + psi_m)
    out = (float(log_a0), float(log_a1), float(log_a0 + log_a1))
    instance._norm_cache = out
    return out


def _s_local_slices(instance: GadgetInstance):
    """Per-gadget slices into the concatenated S-layout vector."""
    slices, pos = [], 0
    for v in range(instance.m):
        t = instance.s_sizes[v]
        slices.append(slice(pos, pos + t))
        pos += t
    return slices


def s_pair_entries(instance: GadgetInstance):
    """Matched pairs as (local_i, local_j, weight, edge) over the S layout."""
    p = instance.plan
    offsets, pos = {}, 0
    for v in range(instance.m):
        offsets[v] = pos - instance.gadget_start[v]
        pos += instance.s_sizes[v]
    entries = []
    for (u, v), wt in p.edge_weights.items():
        for i, j in instance.matching_pairs(u, v):
            entries.append((i + offsets[u], j + offsets[v], wt, (u, v)))
    return entries


def exact_pinned_mass(instance: GadgetInstance, sigma_s: np.ndarray, y: np.ndarray) -> float:
    """log mu(sigma_S ; Y): exact joint mass of an S assignment and a phase.

    Removing S factors the instance into the R blocks; each block sees the
    uniform conditional field h' = (beta/r) m_{S_v} and its half-space sum
    is a windowed slice total.  Everything else is explicit energy on S.
    """
    sigma_s = np.asarray(sigma_s, dtype=np.float64)
    if sigma_s.shape != (instance.s_total,):
        raise ValueError("exact_pinned_mass: sigma_S must cover all of S")
    return float(exact_pinned_mass_batch(instance, sigma_s[None, :], y)[0])


def exact_pinned_mass_batch(instance: GadgetInstance, sigma_s: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectorized exact_pinned_mass over rows of sigma_s, shape (B, |S|)."""
    p = instance.plan
    sigma_s = np.asarray(sigma_s, dtype=np.float64)
    y = np.asarray(y)
    slices = _s_local_slices(instance)
    total = np.full(sigma_s.shape[0], instance.log_self_loop_offset)
    for v in range(instance.m):
        block = sigma_s[:, slices[v]]
        total += p.h_tilde[v] * block[:, : p.t0[v]].sum(axis=1)
        m_s = np.rint(block.sum(axis=1)).astype(np.int64)
        uniq = np.unique(m_s)
        table = {int(ms): instance.pinned_log_z(v, int(ms), int(y[v])) for ms in uniq}
        total += np.vectorize(table.__getitem__)(m_s)
    for li, lj, wt, _ in s_pair_entries(instance):
        total += wt * sigma_s[:, li] * sigma_s[:, lj]
    return total


def approx_pinned_mass(instance: GadgetInstance, sigma_t: np.ndarray, y: np.ndarray):
    """(log gamma_hat, log mu_hat) for a partial S assignment.

    sigma_t lives on the S layout with entries in {-1, 0, +1}; zeros mark
    unassigned sites.  gamma_hat is the product of per-site two-point
    factors and matched-pair factors; mu_hat = gamma_hat * A0 * exp(h.y).
    """
    p = instance.plan
    sigma_t = np.asarray(sigma_t, dtype=np.int8)
    if sigma_t.shape != (instance.s_total,):
        raise ValueError("approx_pinned_mass: sigma_T must live on the S layout")
    y = np.asarray(y)
    consts = p.consts
    beta_gap = p.beta * consts.gap
    slices = _s_local_slices(instance)
    log_gamma = 0.0
    for v in range(instance.m):
        a = p.h_tilde[v] + float(y[v]) * beta_gap
        block = sigma_t[slices[v]][: p.t0[v]]
        assigned = block[block != 0].astype(np.float64)
        log_gamma += float(np.sum(assigned * a - log2cosh(np.full_like(assigned, a))))
    log_q = {1: math.log(consts.q_plus), -1: math.log(consts.q_minus)}
    for li, lj, wt, (u, v) in s_pair_entries(instance):
        si, sj = int(sigma_t[li]), int(sigma_t[lj])
        yu, yv = int(y[u]), int(y[v])
        if si and sj:
            log_gamma += log_q[si * yu] + log_q[sj * yv] + wt * si * sj
        elif si and not sj:
            log_gamma += log_q[si * yu] + np.logaddexp(
                log_q[yv] + wt * si, log_q[-yv] - wt * si)
        elif sj and not si:
            log_gamma += log_q[sj * yv] + np.logaddexp(
                log_q[yu] + wt * sj, log_q[-yu] - wt * sj)
        else:
            terms = [log_q[a * yu] + log_q[b * yv] + wt * a * b
                     for a in (1, -1) for b in (1, -1)]
            log_gamma += float(logsumexp(terms))
    log_a0, _, _ = normalization_A(instance)
    log_mu = log_gamma + log_a0 + float(p.source.h @ y)
    return float(log_gamma), float(log_mu)


def log_z_hat_product(instance: GadgetInstance, y: np.ndarray) -> float:
    """Exact log Z of the matching-free instance restricted to phase y:
    the product of per-gadget half-space sums."""
    y = np.asarray(y)
    total = instance.log_self_loop_offset
    for v in range(instance.m):
        total += instance.gadget_sectors(v).log_z(int(y[v]))
    return float(total)


def log_mu_source(instance: GadgetInstance, y: np.ndarray) -> float:
    """log unnormalized source mass 0.5 y.J.y + h.y."""
    src = instance.plan.source
    y = np.asarray(y, dtype=np.float64)
    return float(0.5 * y @ src.J @ y + src.h @ y)


def exact_phase_logZ(instance: GadgetInstance, y: np.ndarray) -> float:
    """Sector-exact log Z(y) by summing exact_pinned_mass over all of S.

    Exponential in |S|; guarded like the other exact oracles.
    """
    s_total = instance.s_total
    if s_total > 22:
        raise SizeGuardError(f"exact_phase_logZ: |S|={s_total} too large")
    from .ising import index_to_signs
    idx = np.arange(1 << s_total, dtype=np.uint64)
    signs = index_to_signs(idx, s_total)
    vals = [exact_pinned_mass(instance, row.astype(np.float64), y) for row in signs]
    return float(logsumexp(np.asarray(vals)))


NEWTON_R_LIMIT = 52


def newton_elementary(weights) -> np.ndarray:
    """Elementary symmetric polynomials e_0..e_r via Newton's identities.

    k e_k = e_{k-1} p_1 - e_{k-2} p_2 + ... +- p_k with p_j the power sums.
    The alternating sum cancels catastrophically for large r, so this path
    is guarded; production code uses the uniform-field closed form and
    keeps this as the cross-check the construction specifies.
    """
    w = np.asarray(weights, dtype=np.float64)
    r = w.size
    if r > NEWTON_R_LIMIT:
        raise InfeasibleError(f"newton_elementary: r={r} exceeds {NEWTON_R_LIMIT}")
    p = np.array([np.sum(w**j) for j in range(1, r + 1)])
    e = np.zeros(r + 1)
    e[0] = 1.0
    for k in range(1, r + 1):
        acc = 0.0
        sign = 1.0
        for j in range(1, k + 1):
            acc += sign * e[k - j] * p[j - 1]
            sign = -sign
        e[k] = acc / k
    return e


def pinned_logz_newton(consts: BetaConstants, r: int, site_fields, y: int) -> float:
    """Half-space pinned sum with arbitrary per-site R fields.

    Z^{k/r} = exp(beta (2k-r)^2 / 2r - sum_i h'_i) e_k((exp(2 h'_i))_i);
    general-field evaluator via Newton's identities, for cross-checking the
    uniform-field fast path on real instances and synthetic variants.
    """
    h = np.asarray(site_fields, dtype=np.float64)
    if h.size != r:
        raise ValueError("pinned_logz_newton: need one field per R site")
    shift = float(np.max(h))
    e = newton_elementary(np.exp(2.0 * (h - shift)))
    ks = np.arange(0, r + 1)
    half = ks > r // 2 if y > 0 else ks <= r // 2
    ks = ks[half]
    with np.errstate(divide="ignore"):
        log_e = np.where(e[ks] > 0, np.log(np.maximum(e[ks], 1e-300)), -np.inf)
    mag = 2.0 * ks - r
    terms = (consts.beta / (2.0 * r)) * mag**2 - np.sum(h) + 2.0 * ks * shift + log_e
    return float(logsumexp(terms))


def quantize(model: IsingModel, M: int) -> IsingModel:
    """Round every entry of (J, h) to the nearest multiple of 1/M.

    Entrywise perturbation is at most 1/(2M); the density ratio bound
    exp(+-2 n^2 / M) is recorded in the metadata.
    """
    if M < 1:
        raise ValueError("quantize: M must be >= 1")
    J = np.round(model.J * M) / M
    h = np.round(model.h * M) / M
    meta = dict(model.meta)
    meta["quantize"] = {"M": M, "log_density_ratio_bound": 2.0 * model.n**2 / M}
    return IsingModel(J=J, h=h, meta=meta)


def instance_from_json(text: str) -> GadgetInstance:
    """Rebuild a GadgetInstance from its JSON (source model is inline)."""
    from .ising import dump_json as _dump, model_from_json

    doc = json.loads(text)
    source = model_from_json(_dump(doc["source"]))
    r_list = [v["r"] for v in sorted(doc["vertices"], key=lambda v: v["id"])]
    p = plan(source, gamma=float(doc["gamma"]), eps=float(doc["epsilon"]),
             r_override=r_list, zero_diagonal=bool(doc["zero_diagonal"]))
    inst = materialize(p, zero_diagonal=bool(doc["zero_diagonal"]))
    if inst.N != doc["layout"]["N"]:
        raise ValueError("instance_from_json: layout mismatch on reconstruction")
    return inst
