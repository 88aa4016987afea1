"""Toy Waters-style signatures over an exponent-label generic group.

Group elements g^a are stored as their exponent label a in Z_p, and the
pairing acts on labels as e(a, b) = a*b mod p.  This makes discrete log and
CDH trivially solvable: the instantiation is a functional stand-in that
keeps every verification equation checkable, and carries NO security.  The
artifact's purpose is the structural pipeline into Ising models, not
cryptography.

Message hash on labels: H(m) = h0 + sum_i m_i * h_i.  A signature is
(s1, s2) = (r, sk + r * H(m)); verification checks
sk_pair + s1 * H(m) == s2 (mod p) where sk_pair = A * B mod p is recovered
through the pairing, plus the range checks s1 < p, s2 < p that keep the
accepting set at exactly p pairs per message even at the bit level.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .circuits import CircuitBuilder, NandCircuit, default_weight, embed, eval_trace, pinning_field
from .ising import IsingModel, dump_json, tilt
from .rng import RngStream

CIRCUIT_P_LIMIT = 1 << 8
GROUP_P_LIMIT = 1 << 16


def is_prime(p: int) -> bool:
    if p < 2:
        return False
    d = 2
    while d * d <= p:
        if p % d == 0:
            return False
        d += 1
    return True


@dataclass(frozen=True)
class GenericGroup:
    """Prime-order group with elements as exponent labels in Z_p."""

    p: int

    def __post_init__(self):
        if not is_prime(self.p):
            raise ValueError(f"GenericGroup: p={self.p} is not prime")
        if not 3 <= self.p < GROUP_P_LIMIT:
            raise ValueError(f"GenericGroup: p={self.p} outside [3, 2^16)")

    def op(self, a: int, b: int) -> int:
        """Group multiplication g^a * g^b."""
        return (a + b) % self.p

    def power(self, a: int, c: int) -> int:
        """(g^a)^c."""
        return (a * c) % self.p

    def pair(self, a: int, b: int) -> int:
        """e(g^a, g^b) = gT^(a*b)."""
        return (a * b) % self.p


@dataclass(frozen=True)
class PublicKey:
    p: int
    A: int            # label of g^alpha
    B: int            # label of g^beta
    h: tuple          # labels h_0 .. h_ell
    ell: int

    @property
    def k(self) -> int:
        return max(1, (self.p - 1).bit_length())


@dataclass(frozen=True)
class SecretKey:
    p: int
    sk: int           # label alpha*beta mod p


@dataclass(frozen=True)
class SchemeLayout:
    """Bit layout of (pk, msg, sig) as circuit inputs and Ising vertices."""

    p: int
    ell: int
    k: int

    @property
    def ell_pk(self) -> int:
        return (3 + self.ell) * self.k

    @property
    def ell_msg(self) -> int:
        return self.ell

    @property
    def ell_sig(self) -> int:
        return 2 * self.k

    @property
    def n(self) -> int:
        return self.ell_pk + self.ell_msg + self.ell_sig


def keygen(p: int, ell: int, rng: RngStream) -> tuple[PublicKey, SecretKey]:
    """Uniform h_0..h_ell and alpha, beta; sk is the label alpha*beta."""
    if not is_prime(p):
        raise ValueError(f"keygen: p={p} is not prime")
    if ell < 1:
        raise ValueError("keygen: ell must be >= 1")
    GenericGroup(p)
    alpha = int(rng.integers(0, p))
    beta = int(rng.integers(0, p))
    h = tuple(int(x) for x in rng.integers(0, p, size=ell + 1))
    pk = PublicKey(p=p, A=alpha, B=beta, h=h, ell=ell)
    return pk, SecretKey(p=p, sk=(alpha * beta) % p)


def hash_exponent(pk: PublicKey, msg_bits) -> int:
    """Label of H(m) = h0 * prod h_i^{m_i}."""
    msg_bits = np.asarray(msg_bits)
    if msg_bits.shape != (pk.ell,):
        raise ValueError("hash_exponent: message length mismatch")
    return int((pk.h[0] + sum(int(b) * pk.h[1 + i] for i, b in enumerate(msg_bits))) % pk.p)


def sign(sk: SecretKey, pk: PublicKey, msg_bits, rng: RngStream) -> tuple[int, int]:
    """(s1, s2) = (r, sk + r*H(m)), r uniform in Z_p."""
    r = int(rng.integers(0, pk.p))
    return r, (sk.sk + r * hash_exponent(pk, msg_bits)) % pk.p


def verify(pk: PublicKey, msg_bits, sig) -> bool:
    """Pairing-equation check on labels; False on malformed input."""
    try:
        s1, s2 = int(sig[0]), int(sig[1])
    except (TypeError, ValueError, IndexError):
        return False
    msg_bits = np.asarray(msg_bits)
    if msg_bits.shape != (pk.ell,) or not np.all((msg_bits == 0) | (msg_bits == 1)):
        return False
    if not (0 <= s1 < pk.p and 0 <= s2 < pk.p):
        return False
    group = GenericGroup(pk.p)
    lhs = group.op(group.pair(pk.A, pk.B), group.pair(s1, hash_exponent(pk, msg_bits)))
    rhs = group.pair(1, s2)
    return lhs == rhs


def accepting_set(pk: PublicKey, msg_bits) -> set:
    """All label pairs accepted for the message; has exactly p elements."""
    sk_pair = (pk.A * pk.B) % pk.p
    hm = hash_exponent(pk, msg_bits)
    return {(r, (sk_pair + r * hm) % pk.p) for r in range(pk.p)}


def label_to_bits(x: int, k: int) -> list[int]:
    return [(x >> b) & 1 for b in range(k)]


def bits_to_label(bits) -> int:
    return int(sum(int(b) << i for i, b in enumerate(bits)))


def pk_bits(pk: PublicKey) -> np.ndarray:
    k = pk.k
    bits = []
    for label in (pk.A, pk.B, *pk.h):
        bits.extend(label_to_bits(label, k))
    return np.asarray(bits, dtype=np.uint8)


def scheme_layout(pk: PublicKey) -> SchemeLayout:
    return SchemeLayout(p=pk.p, ell=pk.ell, k=pk.k)


@lru_cache(maxsize=32)
def compile_verifier(p: int, ell: int) -> NandCircuit:
    """NAND circuit computing Verify on the (pk, msg, sig) bit layout.

    Input order: A, B, h_0..h_ell as k-bit LSB-first labels, then the ell
    message bits, then s1 and s2.  The single output bit (the last wire) is
    the verification result.  pk labels are reduced mod p on entry; the
    signature words are range-checked instead, so acceptance means
    s1, s2 < p and sk_pair + s1*H(m) == s2 (mod p).
    """
    if not is_prime(p):
        raise ValueError(f"compile_verifier: p={p} is not prime")
    if p >= CIRCUIT_P_LIMIT:
        raise ValueError(f"compile_verifier: p={p} exceeds {CIRCUIT_P_LIMIT}")
    layout = SchemeLayout(p=p, ell=ell, k=max(1, (p - 1).bit_length()))
    k = layout.k
    b = CircuitBuilder(layout.n)

    words = []
    for w in range(3 + ell):
        words.append(list(range(w * k, (w + 1) * k)))
    msg = list(range(layout.ell_pk, layout.ell_pk + ell))
    s1 = list(range(layout.ell_pk + ell, layout.ell_pk + ell + k))
    s2 = list(range(layout.ell_pk + ell + k, layout.ell_pk + ell + 2 * k))

    a_red = b.mod_reduce(words[0], p)
    b_red = b.mod_reduce(words[1], p)
    h_red = [b.mod_reduce(words[2 + i], p) for i in range(ell + 1)]

    hm = h_red[0]
    for i in range(ell):
        hm = b.mod_add(hm, b.mask_word(msg[i], h_red[1 + i]), p, k)

    sk_pair = b.mod_mul(a_red, b_red, p, k)
    s1_red = b.mod_reduce(s1, p)
    lhs = b.mod_add(sk_pair, b.mod_mul(s1_red, hm, p, k), p, k)

    ok_eq = b.equals(lhs, s2)
    pc = b.const_bits(p, k)
    ok_r1 = b.not_(b.geq(s1, pc))
    ok_r2 = b.not_(b.geq(s2, pc))
    b.and_(b.and_(ok_eq, ok_r1), ok_r2)
    return b.build()


def verify_bits(p: int, ell: int, input_bits) -> bool:
    """Reference semantics of the verifier circuit on raw input bits."""
    layout = SchemeLayout(p=p, ell=ell, k=max(1, (p - 1).bit_length()))
    k = layout.k
    bits = np.asarray(input_bits, dtype=np.int64)
    if bits.shape != (layout.n,):
        raise ValueError("verify_bits: input width mismatch")
    words = [bits_to_label(bits[w * k:(w + 1) * k]) % p for w in range(3 + ell)]
    msg = bits[layout.ell_pk:layout.ell_pk + ell]
    s1 = bits_to_label(bits[layout.ell_pk + ell:layout.ell_pk + ell + k])
    s2 = bits_to_label(bits[layout.ell_pk + ell + k:layout.ell_pk + ell + 2 * k])
    if s1 >= p or s2 >= p:
        return False
    hm = (words[2] + sum(int(m) * words[3 + i] for i, m in enumerate(msg))) % p
    return (words[0] * words[1] + s1 * hm) % p == s2


def build_mu_pk(pk: PublicKey, w: float | None = None) -> tuple[IsingModel, dict]:
    """Ising model concentrated on valid encodings under pk.

    Embeds the verifier circuit, then tilts by the pinning field that fixes
    the public-key coordinates to their signs and the output coordinate to
    +1.  J depends only on (p, ell); h depends on pk.
    """
    circuit = compile_verifier(pk.p, pk.ell)
    if w is None:
        w = default_weight(circuit)
    base = embed(circuit, w)
    layout = scheme_layout(pk)
    pkb = pk_bits(pk)
    S = np.concatenate([np.arange(layout.ell_pk), [circuit.m - 1]])
    tau = np.concatenate([pkb.astype(np.int8) * 2 - 1, [1]])
    model = tilt(base, pinning_field(circuit, S, tau, w))
    meta = {
        "kind": "mu-pk",
        "p": pk.p,
        "ell": pk.ell,
        "k": layout.k,
        "w": w,
        "ell_pk": layout.ell_pk,
        "ell_msg": layout.ell_msg,
        "ell_sig": layout.ell_sig,
        "n": layout.n,
        "m": circuit.m,
    }
    model = IsingModel(J=model.J, h=model.h, meta=meta)
    return model, meta


def psi_msg(layout: SchemeLayout, x) -> np.ndarray:
    """Message bits of a +-1 vector over the m trace vertices."""
    x = np.asarray(x)
    return (x[layout.ell_pk:layout.ell_pk + layout.ell_msg] > 0).astype(np.uint8)


def psi_sig(layout: SchemeLayout, x) -> np.ndarray:
    """Signature bits of a +-1 vector over the m trace vertices."""
    x = np.asarray(x)
    start = layout.ell_pk + layout.ell_msg
    return (x[start:start + layout.ell_sig] > 0).astype(np.uint8)


def decode_signature(layout: SchemeLayout, x) -> tuple[int, int]:
    bits = psi_sig(layout, x)
    return bits_to_label(bits[:layout.k]), bits_to_label(bits[layout.k:])


def draw_training_set(pk: PublicKey, sk: SecretKey, count: int, rng: RngStream) -> np.ndarray:
    """count i.i.d. valid-encoding configurations (rows of +-1 over m).

    Uniform message, signature from sign(); by uniformity plus exact
    regularity the rows follow the uniform law on valid encodings.
    """
    circuit = compile_verifier(pk.p, pk.ell)
    layout = scheme_layout(pk)
    pkb = pk_bits(pk)
    out = np.empty((count, circuit.m), dtype=np.int8)
    for i in range(count):
        msg = rng.integers(0, 2, size=pk.ell).astype(np.uint8)
        s1, s2 = sign(sk, pk, msg, rng)
        sig_bits = np.asarray(label_to_bits(s1, layout.k) + label_to_bits(s2, layout.k), dtype=np.uint8)
        inp = np.concatenate([pkb, msg, sig_bits])
        out[i] = eval_trace(circuit, inp).astype(np.int8) * 2 - 1
    return out


def key_to_json(pk: PublicKey, sk: SecretKey | None = None) -> str:
    doc = {"p": pk.p, "A": pk.A, "B": pk.B, "h": list(pk.h)}
    if sk is not None:
        doc["sk"] = sk.sk
    return dump_json(doc)


def key_from_json(text: str) -> tuple[PublicKey, SecretKey | None]:
    import json as _json

    doc = _json.loads(text)
    h = tuple(int(x) for x in doc["h"])
    pk = PublicKey(p=int(doc["p"]), A=int(doc["A"]), B=int(doc["B"]), h=h, ell=len(h) - 1)
    sk = SecretKey(p=pk.p, sk=int(doc["sk"])) if "sk" in doc else None
    return pk, sk
