"""NAND circuits, a combinator library for modular arithmetic, and the
circuit-to-Ising embedding.

A circuit on n input bits is an ordered list of two-input NAND gates; gate
g reads wires i, j < n + g and writes wire n + g.  The last wire is the
circuit output.  Traces (input bits followed by every gate output) are what
the embedded Ising model concentrates on: each gate contributes a three-spin
energy term maximized exactly when the gate is consistent.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .ising import IsingModel

MIN_EMBED_WEIGHT = 12.0


@dataclass(frozen=True)
class NandCircuit:
    """Topologically ordered two-input NAND gates over n_inputs bits."""

    n_inputs: int
    gates: np.ndarray  # (r, 2) int32, gate g outputs wire n_inputs + g

    def __post_init__(self):
        gates = np.asarray(self.gates, dtype=np.int32).reshape(-1, 2)
        if self.n_inputs < 1:
            raise ValueError("NandCircuit: need at least one input")
        for g in range(gates.shape[0]):
            if gates[g].max() >= self.n_inputs + g or gates[g].min() < 0:
                raise ValueError(f"NandCircuit: gate {g} reads a later wire")
        gates.setflags(write=False)
        object.__setattr__(self, "gates", gates)

    @property
    def n_gates(self) -> int:
        return self.gates.shape[0]

    @property
    def m(self) -> int:
        return self.n_inputs + self.n_gates

    def to_json(self) -> str:
        return json.dumps({"n_inputs": self.n_inputs, "gates": self.gates.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "NandCircuit":
        doc = json.loads(text)
        return cls(n_inputs=int(doc["n_inputs"]), gates=np.asarray(doc["gates"], dtype=np.int32).reshape(-1, 2))


def eval_trace(circuit: NandCircuit, input_bits) -> np.ndarray:
    """Full 0/1 trace of length m for one input."""
    return eval_traces(circuit, np.asarray(input_bits, dtype=np.uint8)[None, :])[0]


def eval_traces(circuit: NandCircuit, input_bits: np.ndarray) -> np.ndarray:
    """Traces for a batch of inputs, shape (batch, m)."""
    inputs = np.asarray(input_bits, dtype=np.uint8)
    if inputs.ndim != 2 or inputs.shape[1] != circuit.n_inputs:
        raise ValueError("eval_traces: input width mismatch")
    if not np.all(inputs <= 1):
        raise ValueError("eval_traces: inputs must be bits")
    traces = np.empty((inputs.shape[0], circuit.m), dtype=np.uint8)
    traces[:, : circuit.n_inputs] = inputs
    kernels.eval_traces_batch(
        np.ascontiguousarray(circuit.gates[:, 0]),
        np.ascontiguousarray(circuit.gates[:, 1]),
        traces,
        circuit.n_inputs,
    )
    return traces


def trace_signs(circuit: NandCircuit, input_bits) -> np.ndarray:
    """Phi representation of one input: the trace mapped through b -> 2b-1."""
    return eval_trace(circuit, input_bits).astype(np.int8) * 2 - 1


def default_weight(circuit: NandCircuit) -> float:
    """Gate weight for embedding: 3 per gate, at least 12."""
    return max(MIN_EMBED_WEIGHT, 3.0 * circuit.n_gates)


def embed(circuit: NandCircuit, w: float) -> IsingModel:
    """Ising model whose law is exp(-4w)-close (times 2^m) to uniform traces.

    Per gate (i, j -> k): J_ij -= w, J_ik -= 2w, J_jk -= 2w and biases
    h_i += w, h_j += w, h_k += 2w, so a consistent gate contributes +3w to
    the log mass and any inconsistent one at most -w.
    """
    if w <= 0:
        raise ValueError("embed: w must be positive")
    m = circuit.m
    J = np.zeros((m, m))
    h = np.zeros(m)
    for g in range(circuit.n_gates):
        i, j = int(circuit.gates[g, 0]), int(circuit.gates[g, 1])
        k = circuit.n_inputs + g
        J[i, j] -= w
        J[j, i] -= w
        J[i, k] -= 2.0 * w
        J[k, i] -= 2.0 * w
        J[j, k] -= 2.0 * w
        J[k, j] -= 2.0 * w
        h[i] += w
        h[j] += w
        h[k] += 2.0 * w
    return IsingModel(J=J, h=h, meta={"kind": "nand-embedding", "w": w, "n_inputs": circuit.n_inputs})


def pinning_field(circuit: NandCircuit, S, tau, w: float) -> np.ndarray:
    """Tilt vector with entries w*tau_i on S and 0 elsewhere."""
    S = np.asarray(S, dtype=np.int64)
    tau = np.asarray(tau, dtype=np.float64)
    lam = np.zeros(circuit.m)
    if S.size == 0:
        return lam
    if S.min() < 0 or S.max() >= circuit.m:
        raise ValueError("pinning_field: S out of range")
    if not np.all(np.abs(tau) == 1):
        raise ValueError("pinning_field: tau must be +-1")
    lam[S] = w * tau
    return lam


def validity_check(circuit: NandCircuit, x, pinned: dict | None = None) -> bool:
    """True iff the +-1 vector x decodes to a consistent gate-by-gate trace
    and matches any supplied pinned coordinates."""
    x = np.asarray(x)
    if x.shape != (circuit.m,):
        raise ValueError("validity_check: length mismatch")
    bits = (x > 0).astype(np.uint8)
    if pinned:
        for idx, sign in pinned.items():
            if (int(bits[idx]) * 2 - 1) != sign:
                return False
    i = circuit.gates[:, 0]
    j = circuit.gates[:, 1]
    expect = 1 - (bits[i] & bits[j])
    return bool(np.all(bits[circuit.n_inputs:] == expect))


class CircuitBuilder:
    """Accumulates NAND gates; wires are integer ids (inputs 0..n-1)."""

    def __init__(self, n_inputs: int):
        self.n_inputs = n_inputs
        self.gates: list[tuple[int, int]] = []
        self._one: int | None = None
        self._zero: int | None = None

    def nand(self, a: int, b: int) -> int:
        self.gates.append((a, b))
        return self.n_inputs + len(self.gates) - 1

    def build(self) -> NandCircuit:
        return NandCircuit(n_inputs=self.n_inputs, gates=np.asarray(self.gates, dtype=np.int32))

    # --- derived combinators (all pure NAND expansions) ---

    def not_(self, a: int) -> int:
        return self.nand(a, a)

    def and_(self, a: int, b: int) -> int:
        return self.not_(self.nand(a, b))

    def or_(self, a: int, b: int) -> int:
        return self.nand(self.not_(a), self.not_(b))

    def xor(self, a: int, b: int) -> int:
        t = self.nand(a, b)
        return self.nand(self.nand(a, t), self.nand(b, t))

    def mux(self, sel: int, a: int, b: int) -> int:
        """sel ? a : b."""
        return self.nand(self.nand(a, sel), self.nand(b, self.not_(sel)))

    def one(self) -> int:
        if self._one is None:
            self._one = self.nand(0, self.not_(0))
        return self._one

    def zero(self) -> int:
        if self._zero is None:
            self._zero = self.not_(self.one())
        return self._zero

    def const_bits(self, value: int, k: int) -> list[int]:
        return [self.one() if (value >> b) & 1 else self.zero() for b in range(k)]

    def full_adder(self, a: int, b: int, cin: int) -> tuple[int, int]:
        """(sum, carry); the classic nine-gate NAND adder."""
        n1 = self.nand(a, b)
        s1 = self.nand(self.nand(a, n1), self.nand(b, n1))
        n4 = self.nand(s1, cin)
        s = self.nand(self.nand(s1, n4), self.nand(cin, n4))
        carry = self.nand(n1, n4)
        return s, carry

    def add(self, a: list[int], b: list[int], cin: int | None = None) -> tuple[list[int], int]:
        """Ripple-carry sum of equal-width LSB-first words; returns (bits, carry)."""
        assert len(a) == len(b)
        carry = self.zero() if cin is None else cin
        out = []
        for x, y in zip(a, b):
            s, carry = self.full_adder(x, y, carry)
            out.append(s)
        return out, carry

    def sub(self, a: list[int], b: list[int]) -> tuple[list[int], int]:
        """a - b via complement-add; second output is 1 iff a >= b."""
        nb = [self.not_(x) for x in b]
        return self.add(a, nb, cin=self.one())

    def geq(self, a: list[int], b: list[int]) -> int:
        """1 iff a >= b as unsigned words."""
        return self.sub(a, b)[1]

    def mux_word(self, sel: int, a: list[int], b: list[int]) -> list[int]:
        return [self.mux(sel, x, y) for x, y in zip(a, b)]

    def mask_word(self, sel: int, a: list[int]) -> list[int]:
        return [self.and_(sel, x) for x in a]

    def equal_zero(self, bits: list[int]) -> int:
        acc = bits[0]
        for b in bits[1:]:
            acc = self.or_(acc, b)
        return self.not_(acc)

    def equals(self, a: list[int], b: list[int]) -> int:
        return self.equal_zero([self.xor(x, y) for x, y in zip(a, b)])

    def mod_reduce(self, x: list[int], p: int) -> list[int]:
        """x mod p for x < 2p, one conditional subtract; result width len(x)."""
        pc = self.const_bits(p, len(x))
        diff, no_borrow = self.sub(x, pc)
        return self.mux_word(no_borrow, diff, x)

    def mod_add(self, a: list[int], b: list[int], p: int, k: int) -> list[int]:
        """(a + b) mod p for a, b < p, k-bit words; returns k bits."""
        za = a + [self.zero()]
        zb = b + [self.zero()]
        s, _ = self.add(za, zb)
        return self.mod_reduce(s, p)[:k]

    def mod_mul(self, a: list[int], b: list[int], p: int, k: int) -> list[int]:
        """(a * b) mod p for a < p, shift-and-add from the top bit of b down."""
        acc = self.const_bits(0, k)
        for j in reversed(range(k)):
            acc = self.mod_add(acc, acc, p, k)
            addend = self.mask_word(b[j], a)
            acc = self.mod_add(acc, addend, p, k)
        return acc
