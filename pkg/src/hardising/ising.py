"""Core Ising types and exact small-instance oracles.

The model density is exp(0.5*s.J.s + h.s) over s in {-1,+1}^n.  Everything
mass-like lives in log domain: embedded circuit models reach unnormalized
masses of exp(3*w*r), which no linear-domain float survives.

Configurations are addressed by integer index; bit i of the index is 1
exactly when spin i is +1.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh
from scipy.special import logsumexp

from . import kernels

BRUTE_FORCE_LIMIT = 24
DENSE_EIG_LIMIT = 2000
SYMMETRY_TOL = 1e-12


class SizeGuardError(ValueError):
    """Raised when an exact enumeration would exceed the 2**24 state guard."""


@dataclass(frozen=True)
class IsingModel:
    """Interaction matrix J (symmetric), external field h, on n vertices."""

    J: np.ndarray
    h: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        J = np.asarray(self.J, dtype=np.float64)
        h = np.asarray(self.h, dtype=np.float64)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise ValueError("IsingModel: J must be square")
        if h.shape != (J.shape[0],):
            raise ValueError("IsingModel: h length must match J")
        if J.shape[0] < 1:
            raise ValueError("IsingModel: need at least one vertex")
        asym = np.max(np.abs(J - J.T)) if J.size else 0.0
        if asym > SYMMETRY_TOL:
            raise ValueError(f"IsingModel: J asymmetric by {asym:.3g} > {SYMMETRY_TOL}")
        J = 0.5 * (J + J.T)
        J.setflags(write=False)
        h = h.copy()
        h.setflags(write=False)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "h", h)

    @property
    def n(self) -> int:
        return self.J.shape[0]


class SpinConfiguration:
    """A +-1 assignment, stored bit-packed (+1 <-> bit 1, little-endian)."""

    __slots__ = ("n", "packed")

    def __init__(self, n: int, packed: np.ndarray):
        self.n = int(n)
        self.packed = np.asarray(packed, dtype=np.uint8)

    @classmethod
    def from_signs(cls, signs) -> "SpinConfiguration":
        signs = np.asarray(signs)
        if not np.all(np.abs(signs) == 1):
            raise ValueError("SpinConfiguration: entries must be +-1")
        bits = (signs > 0).astype(np.uint8)
        return cls(signs.size, np.packbits(bits, bitorder="little"))

    @classmethod
    def from_index(cls, index: int, n: int) -> "SpinConfiguration":
        return cls.from_signs(index_to_signs(np.array([index], dtype=np.uint64), n)[0])

    def signs(self) -> np.ndarray:
        return np.unpackbits(self.packed, count=self.n, bitorder="little").astype(np.int8) * 2 - 1

    def index(self) -> int:
        bits = np.unpackbits(self.packed, count=self.n, bitorder="little").astype(np.uint64)
        return int((bits << np.arange(self.n, dtype=np.uint64)).sum())

    def __eq__(self, other):
        return self.n == other.n and np.array_equal(self.packed, other.packed)

    def __hash__(self):
        return hash((self.n, self.packed.tobytes()))


@dataclass(frozen=True)
class DistributionTable:
    """Exact unnormalized log masses over all 2**n configurations."""

    n: int
    log_mass: np.ndarray
    log_Z: float

    @classmethod
    def from_log_mass(cls, log_mass: np.ndarray) -> "DistributionTable":
        log_mass = np.asarray(log_mass, dtype=np.float64)
        n = int(np.log2(log_mass.size))
        if 1 << n != log_mass.size:
            raise ValueError("DistributionTable: length must be a power of two")
        if n > BRUTE_FORCE_LIMIT:
            raise SizeGuardError(f"DistributionTable: n={n} exceeds {BRUTE_FORCE_LIMIT}")
        return cls(n=n, log_mass=log_mass, log_Z=float(logsumexp(log_mass)))

    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_mass - self.log_Z)


def index_to_signs(indices: np.ndarray, n: int) -> np.ndarray:
    """(len(indices), n) array of +-1 rows decoding the config indices."""
    indices = np.asarray(indices, dtype=np.uint64)
    bitpos = np.arange(n, dtype=np.uint64)
    return (((indices[:, None] >> bitpos[None, :]) & 1).astype(np.int8) * 2 - 1)


def signs_to_index(signs: np.ndarray) -> np.ndarray:
    """Inverse of index_to_signs, vectorized over rows."""
    signs = np.atleast_2d(np.asarray(signs))
    n = signs.shape[1]
    bits = (signs > 0).astype(np.uint64)
    return (bits << np.arange(n, dtype=np.uint64)).sum(axis=1)


def _as_signs(model: IsingModel, sigma) -> np.ndarray:
    if isinstance(sigma, SpinConfiguration):
        if sigma.n != model.n:
            raise ValueError("energy: configuration length mismatch")
        return sigma.signs().astype(np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != (model.n,):
        raise ValueError("energy: configuration length mismatch")
    return sigma


def energy(model: IsingModel, sigma) -> float:
    """Log unnormalized mass 0.5*s.J.s + h.s."""
    s = _as_signs(model, sigma)
    return float(0.5 * s @ model.J @ s + model.h @ s)


def brute_force_table(model: IsingModel) -> DistributionTable:
    """Enumerate all 2**n energies (n <= 24)."""
    if model.n > BRUTE_FORCE_LIMIT:
        raise SizeGuardError(f"brute_force_table: n={model.n} exceeds {BRUTE_FORCE_LIMIT}")
    log_mass = kernels.gray_energies(np.ascontiguousarray(model.J), np.ascontiguousarray(model.h))
    return DistributionTable.from_log_mass(log_mass)


def tv_distance(p: DistributionTable, q: DistributionTable) -> float:
    """Total variation distance between the normalized tables."""
    if p.n != q.n:
        raise ValueError("tv_distance: tables have different n")
    return 0.5 * float(np.abs(p.probabilities() - q.probabilities()).sum())


def tilt(model: IsingModel, w) -> IsingModel:
    """Shift the external field by w; the J matrix is untouched."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (model.n,):
        raise ValueError("tilt: vector length mismatch")
    return IsingModel(J=model.J, h=model.h + w, meta=dict(model.meta))


def pin(model: IsingModel, S, tau) -> tuple[IsingModel, float]:
    """Condition on sigma_S = tau.

    Returns the model on the remaining vertices plus a log-domain offset:
    energy(pinned, s_rest) + offset == energy(model, merged) for every
    completion s_rest.
    """
    S = np.asarray(S, dtype=np.int64)
    tau = np.asarray(tau, dtype=np.float64)
    if S.size == 0:
        return IsingModel(J=model.J, h=model.h, meta=dict(model.meta)), 0.0
    if S.min() < 0 or S.max() >= model.n:
        raise ValueError("pin: S out of range")
    if np.unique(S).size != S.size:
        raise ValueError("pin: S has repeated indices")
    if tau.shape != S.shape or not np.all(np.abs(tau) == 1):
        raise ValueError("pin: tau must be +-1 on S")
    rest = np.setdiff1d(np.arange(model.n), S)
    J_rr = model.J[np.ix_(rest, rest)]
    J_rs = model.J[np.ix_(rest, S)]
    J_ss = model.J[np.ix_(S, S)]
    h_rest = model.h[rest] + J_rs @ tau
    offset = float(0.5 * tau @ J_ss @ tau + model.h[S] @ tau)
    return IsingModel(J=J_rr, h=h_rest, meta=dict(model.meta)), offset


def width(model: IsingModel) -> float:
    """max_i (sum_{j != i} |J_ij| + |h_i|)."""
    offdiag = np.abs(model.J).sum(axis=1) - np.abs(np.diag(model.J))
    return float(np.max(offdiag + np.abs(model.h)))


def extremal_eigenvalues(op, n: int) -> tuple[float, float]:
    """(lambda_min, lambda_max) of a symmetric operator, iterative path."""
    if not isinstance(op, LinearOperator):
        op = LinearOperator((n, n), matvec=op, dtype=np.float64)
    hi = eigsh(op, k=1, which="LA", tol=1e-10, return_eigenvectors=False, maxiter=5000)
    lo = eigsh(op, k=1, which="SA", tol=1e-10, return_eigenvectors=False, maxiter=5000)
    return float(lo[0]), float(hi[0])


def spectral_width(model_or_op, n: int | None = None) -> float:
    """lambda_max(J) - lambda_min(J).

    Exact symmetric eigensolve up to 2000 vertices; Lanczos extremal
    eigenvalues (relative tolerance 1e-8) above, accepting any symmetric
    LinearOperator / matvec for structured instances.
    """
    if isinstance(model_or_op, IsingModel):
        J = model_or_op.J
        if model_or_op.n <= DENSE_EIG_LIMIT:
            eig = np.linalg.eigvalsh(J)
            return float(eig[-1] - eig[0])
        lo, hi = extremal_eigenvalues(LinearOperator(J.shape, matvec=lambda v: J @ v, dtype=np.float64), model_or_op.n)
        return hi - lo
    if n is None:
        raise ValueError("spectral_width: n required for operator input")
    lo, hi = extremal_eigenvalues(model_or_op, n)
    return hi - lo


def pushforward(p: DistributionTable, f, codomain_n: int) -> DistributionTable:
    """Image table of p under f.

    f maps an array of domain config indices to codomain config indices
    (vectorized).  The codomain is enumerated exactly, so codomain_n is
    guarded like every other brute-force oracle.
    """
    if codomain_n > BRUTE_FORCE_LIMIT:
        raise SizeGuardError(f"pushforward: codomain n={codomain_n} exceeds {BRUTE_FORCE_LIMIT}")
    size = 1 << codomain_n
    out = np.full(size, -np.inf)
    chunk = 1 << 16
    total = p.log_mass.size
    # two-pass scatter logsumexp: per-cell max, then shifted exp sums
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.uint64)
        codes = np.asarray(f(idx), dtype=np.int64)
        np.maximum.at(out, codes, p.log_mass[start:start + idx.size])
    sums = np.zeros(size)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.uint64)
        codes = np.asarray(f(idx), dtype=np.int64)
        np.add.at(sums, codes, np.exp(p.log_mass[start:start + idx.size] - out[codes]))
    mask = sums > 0
    out[mask] += np.log(sums[mask])
    return DistributionTable.from_log_mass(out)


def sample_indices(table: DistributionTable, rng, size: int) -> np.ndarray:
    """Draw config indices i.i.d. from the normalized table."""
    probs = table.probabilities()
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    u = rng.random(size)
    return np.searchsorted(cdf, u, side="right").astype(np.uint64)


# ---------------------------------------------------------------------------
# JSON model format: {"n", "J": row-major lower triangle, "h", "meta"},
# reals printed with 17 significant digits.


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _dump_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return _fmt(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_dump_value(x) for x in v) + "]"
    if isinstance(v, dict):
        items = ", ".join(f"{json.dumps(str(k))}: {_dump_value(val)}" for k, val in v.items())
        return "{" + items + "}"
    if v is None:
        return "null"
    raise TypeError(f"cannot serialize {type(v)}")


def dump_json(obj: dict) -> str:
    """JSON text with floats at 17 significant digits."""
    return _dump_value(obj)


def model_to_json(model: IsingModel) -> str:
    tri = [model.J[i, j] for i in range(model.n) for j in range(i + 1)]
    return dump_json({"n": model.n, "J": tri, "h": list(model.h), "meta": model.meta})


def model_from_json(text: str) -> IsingModel:
    doc = json.loads(text)
    n = int(doc["n"])
    J = np.zeros((n, n))
    it = iter(doc["J"])
    for i in range(n):
        for j in range(i + 1):
            J[i, j] = J[j, i] = next(it)
    return IsingModel(J=J, h=np.asarray(doc["h"], dtype=np.float64), meta=doc.get("meta", {}))
