"""Closed-form scalar machinery for the two-phase gadget analysis.

Binary entropy, the tilted free-energy curve f_beta and its derivatives,
the upper root q+ of f_beta' (the dominant magnetization level), the
vertex/edge weight maps and their inverses, and the (delta, r) parameter
rule that makes a single gadget's phase decomposition accurate.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_GRID_POINTS = 10_000
_C2_SAFETY = 1.1


def entropy(alpha: float) -> float:
    """Binary entropy -a ln a - (1-a) ln(1-a), natural log."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"entropy: alpha={alpha} outside (0,1)")
    return -alpha * math.log(alpha) - (1.0 - alpha) * math.log(1.0 - alpha)


def f_beta(beta: float, alpha: float) -> float:
    """Free-energy curve H(alpha) + (beta/2)(2*alpha-1)^2."""
    return entropy(alpha) + 0.5 * beta * (2.0 * alpha - 1.0) ** 2


def f1(beta: float, alpha: float) -> float:
    """First derivative ln((1-a)/a) + 2*beta*(2a-1)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"f1: alpha={alpha} outside (0,1)")
    return math.log((1.0 - alpha) / alpha) + 2.0 * beta * (2.0 * alpha - 1.0)


def f2(beta: float, alpha: float) -> float:
    """Second derivative -1/(a(1-a)) + 4*beta."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"f2: alpha={alpha} outside (0,1)")
    return -1.0 / (alpha * (1.0 - alpha)) + 4.0 * beta


def f3(beta: float, alpha: float) -> float:
    """Third derivative 1/a^2 - 1/(1-a)^2 (independent of beta)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"f3: alpha={alpha} outside (0,1)")
    return 1.0 / alpha**2 - 1.0 / (1.0 - alpha) ** 2


@dataclass(frozen=True)
class BetaConstants:
    """Constants attached to one inverse temperature beta in (1,2].

    q_plus is the upper stationary point of f_beta (the dominant phase
    magnetization as a +1 fraction); alpha_plus the larger root of
    f_beta''=0; C1, C2, C, delta0 the Taylor-deviation constants used by
    the (delta, r) parameter rule.
    """

    beta: float
    q_plus: float
    q_minus: float
    alpha_plus: float
    C1: float
    C2: float
    C: float
    delta0: float

    @property
    def gap(self) -> float:
        """2*q_plus - 1, the magnetization of the dominant phase."""
        return 2.0 * self.q_plus - 1.0


@lru_cache(maxsize=256)
def solve_q_plus(beta: float) -> BetaConstants:
    """Locate q+ by bisection of f' on [alpha_plus, 1) and fill the constants.

    f' is strictly decreasing on the bracket (f'' < 0 there), positive at
    alpha_plus and -inf at 1, so bisection converges unconditionally.
    """
    beta = float(beta)
    if not 1.0 < beta <= 2.0:
        raise ValueError(f"solve_q_plus: beta={beta} outside (1, 2]")
    alpha_plus = 0.5 * (1.0 + math.sqrt(1.0 - 1.0 / beta))
    lo, hi = alpha_plus, 1.0 - 1e-14
    flo = f1(beta, lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f1(beta, mid)
        if abs(fm) < 1e-13:
            lo = hi = mid
            break
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    q_plus = 0.5 * (lo + hi)

    C1 = -0.5 * f2(beta, q_plus)
    delta0_prime = min(0.5 * (1.0 - q_plus), 0.5 * (q_plus - alpha_plus))
    grid = np.linspace(q_plus - delta0_prime, q_plus + delta0_prime, _GRID_POINTS)
    C2 = _C2_SAFETY * float(np.max(np.abs(1.0 / grid**2 - 1.0 / (1.0 - grid) ** 2))) / 6.0
    C = 3.0 * C1 / 8.0
    delta0 = min(delta0_prime, C1 / (3.0 * C2), q_plus - 0.5, 1.0 - q_plus)
    return BetaConstants(
        beta=beta,
        q_plus=q_plus,
        q_minus=1.0 - q_plus,
        alpha_plus=alpha_plus,
        C1=C1,
        C2=C2,
        C=C,
        delta0=delta0,
    )


def phi_vertex(consts: BetaConstants, h: float) -> float:
    """Effective field seen at the phase level from one field site."""
    b, g = consts.beta, consts.gap
    return 0.5 * (
        np.logaddexp(h + b * g, -(h + b * g)) - np.logaddexp(h - b * g, -(h - b * g))
    )


def phi_edge(consts: BetaConstants, w: float) -> float:
    """Effective coupling seen at the phase level from one matched pair."""
    q, qm = consts.q_plus, consts.q_minus
    la = math.log(q * q + qm * qm)
    lb = math.log(2.0 * q * qm)
    return 0.5 * (np.logaddexp(la + w, lb - w) - np.logaddexp(la - w, lb + w))


def phi_vertex_inv(consts: BetaConstants, h: float) -> float:
    """Inverse of phi_vertex; defined for |tanh h| < 2q+-1."""
    g = consts.gap
    t = math.tanh(h)
    if abs(t) >= g:
        raise ValueError(
            f"phi_vertex_inv: |tanh({h})|={abs(t):.6g} >= 2*q_plus-1={g:.6g}"
        )
    return math.atanh(t / g)


def phi_edge_inv(consts: BetaConstants, w: float) -> float:
    """Inverse of phi_edge; defined for |tanh w| < (2q+-1)^2."""
    g2 = consts.gap**2
    t = math.tanh(w)
    if abs(t) >= g2:
        raise ValueError(
            f"phi_edge_inv: |tanh({w})|={abs(t):.6g} >= (2*q_plus-1)^2={g2:.6g}"
        )
    return math.atanh(t / g2)


def choose_delta_r(consts: BetaConstants, t: int, eps: float) -> tuple[float, int]:
    """Window half-width delta and odd block size r for one gadget.

    delta = min(eps/(24*beta*t), delta0); r is the smallest odd integer at
    least max(20*beta*t/(delta^2 C), 2*ln(10/eps)/(delta^2 C), 1/delta, 10).
    At this (delta, r) the two half-space sector sums and the conditional
    product law are within a (1 +- eps) factor of their two-point targets.
    """
    if not 0.0 < eps <= 0.05:
        raise ValueError(f"choose_delta_r: eps={eps} outside (0, 0.05]")
    if t < 1:
        raise ValueError("choose_delta_r: t must be >= 1")
    beta, C = consts.beta, consts.C
    delta = min(eps / (24.0 * beta * t), consts.delta0)
    bound = max(
        20.0 * beta * t / (delta * delta * C),
        2.0 * math.log(10.0 / eps) / (delta * delta * C),
        1.0 / delta,
        10.0,
    )
    r = next_odd(bound)
    return delta, r


def next_odd(x: float) -> int:
    """Smallest odd integer >= x."""
    r = math.ceil(x)
    if r % 2 == 0:
        r += 1
    return int(r)
