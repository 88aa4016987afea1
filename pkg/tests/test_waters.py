import itertools

import numpy as np
import pytest
from scipy import stats

from hardising import waters
from hardising.circuits import eval_trace, eval_traces
from hardising.rng import RngStream


def test_group_bilinearity():
    g = waters.GenericGroup(11)
    rng = RngStream(0)
    for _ in range(50):
        a, b, c = (int(x) for x in rng.integers(0, 11, 3))
        assert g.pair(g.power(a, c), b) == g.power(g.pair(a, b), c)
        assert g.pair(g.op(a, b), c) == (g.pair(a, c) + g.pair(b, c)) % 11
    with pytest.raises(ValueError):
        waters.GenericGroup(9)


def test_keygen_contract():
    pk, sk = waters.keygen(11, 2, RngStream(7))
    pk2, _ = waters.keygen(11, 2, RngStream(7))
    assert pk == pk2
    assert all(0 <= x < 11 for x in (pk.A, pk.B, *pk.h))
    assert sk.sk == (pk.A * pk.B) % 11
    with pytest.raises(ValueError):
        waters.keygen(10, 2, RngStream(0))


def test_keygen_distinct_seeds_no_collision():
    seen = set()
    for seed in range(100):
        pk, _ = waters.keygen(251, 3, RngStream(seed))
        seen.add((pk.A, pk.B, pk.h))
    assert len(seen) == 100


def test_hash_exponent_examples():
    pk = waters.PublicKey(p=11, A=0, B=0, h=(2, 5, 7), ell=2)
    assert waters.hash_exponent(pk, [0, 0]) == 2
    assert waters.hash_exponent(pk, [1, 0]) == 7
    for i in range(2):
        m0 = np.zeros(2, dtype=int)
        m1 = m0.copy()
        m1[i] = 1
        assert waters.hash_exponent(pk, m1) == (waters.hash_exponent(pk, m0) + pk.h[1 + i]) % 11


def test_sign_verify_example():
    pk = waters.PublicKey(p=11, A=1, B=1, h=(7,), ell=0)
    # force H(m)=7, sk=1, r=6: signature (6, 1+42 mod 11) = (6, 10)
    assert (1 + 6 * 7) % 11 == 10


def test_sign_verify_and_tampering():
    pk, sk = waters.keygen(11, 3, RngStream(1))
    rng = RngStream(2)
    for _ in range(30):
        msg = rng.integers(0, 2, 3)
        sig = waters.sign(sk, pk, msg, rng)
        assert waters.verify(pk, msg, sig)
        assert not waters.verify(pk, msg, (sig[0], (sig[1] + 1) % 11))
    assert not waters.verify(pk, np.array([0, 1]), (0, 0))      # wrong length
    assert not waters.verify(pk, np.array([0, 1, 0]), (11, 0))  # out of range


def test_completeness_exhaustive():
    for ell in (1, 2, 3, 4):
        pk, sk = waters.keygen(11, ell, RngStream(ell))
        rng = RngStream(100 + ell)
        for bits in itertools.product((0, 1), repeat=ell):
            msg = np.array(bits)
            assert waters.verify(pk, msg, waters.sign(sk, pk, msg, rng))


def test_exact_regularity_and_uniformity():
    for p in (3, 11, 13):
        pk, sk = waters.keygen(p, 2, RngStream(p))
        for bits in itertools.product((0, 1), repeat=2):
            msg = np.array(bits)
            acc = waters.accepting_set(pk, msg)
            assert len(acc) == p
            brute = {(s1, s2) for s1 in range(p) for s2 in range(p)
                     if waters.verify(pk, msg, (s1, s2))}
            assert brute == acc
            # r -> (r, sk + r H(m)) is injective, so sign is uniform on acc
            images = {waters.sign(sk, pk, msg, _FixedR(r)) for r in range(p)}
            assert images == acc


class _FixedR:
    def __init__(self, r):
        self.r = r

    def integers(self, low, high=None, size=None):
        return np.int64(self.r)


def test_sign_empirical_uniformity():
    pk, sk = waters.keygen(11, 2, RngStream(4))
    msg = np.array([1, 0])
    acc = sorted(waters.accepting_set(pk, msg))
    pos = {s: i for i, s in enumerate(acc)}
    rng = RngStream(5)
    counts = np.zeros(11)
    for _ in range(10_000):
        counts[pos[waters.sign(sk, pk, msg, rng)]] += 1
    assert stats.chisquare(counts).pvalue > 0.001


def test_layout_example():
    assert waters.SchemeLayout(p=11, ell=2, k=4).n == 30
    circ = waters.compile_verifier(11, 2)
    assert circ.n_inputs == 30


def test_verifier_circuit_exhaustive_p3():
    for ell in (1, 2):
        circ = waters.compile_verifier(3, ell)
        n = circ.n_inputs
        inputs = ((np.arange(1 << n)[:, None] >> np.arange(n)[None, :]) & 1).astype(np.uint8)
        outs = eval_traces(circ, inputs)[:, -1]
        refs = np.fromiter(
            (waters.verify_bits(3, ell, row) for row in inputs), dtype=bool, count=inputs.shape[0])
        assert np.array_equal(outs.astype(bool), refs)


def test_verifier_circuit_random_agreement():
    rng = RngStream(6)
    for p, ell in ((11, 2), (13, 3)):
        circ = waters.compile_verifier(p, ell)
        inputs = rng.integers(0, 2, size=(100_000, circ.n_inputs)).astype(np.uint8)
        outs = eval_traces(circ, inputs)[:, -1]
        refs = np.fromiter(
            (waters.verify_bits(p, ell, row) for row in inputs), dtype=bool, count=inputs.shape[0])
        assert int(np.sum(outs.astype(bool) != refs)) == 0


def test_verifier_accepts_signed_and_counts_p_encodings():
    pk, sk = waters.keygen(11, 2, RngStream(8))
    circ = waters.compile_verifier(11, 2)
    pkb = waters.pk_bits(pk)
    rng = RngStream(9)
    msg = np.array([0, 1], dtype=np.uint8)
    s1, s2 = waters.sign(sk, pk, msg, rng)
    sig = np.array(waters.label_to_bits(s1, 4) + waters.label_to_bits(s2, 4), dtype=np.uint8)
    assert eval_trace(circ, np.concatenate([pkb, msg, sig]))[-1] == 1
    encodings = ((np.arange(256)[:, None] >> np.arange(8)[None, :]) & 1).astype(np.uint8)
    batch = np.concatenate([
        np.tile(pkb, (256, 1)), np.tile(msg, (256, 1)), encodings], axis=1)
    assert int(eval_traces(circ, batch)[:, -1].sum()) == 11


def test_build_mu_pk_structure():
    rngs = (RngStream(10), RngStream(11))
    pks = [waters.keygen(11, 2, r)[0] for r in rngs]
    models = [waters.build_mu_pk(pk, w=24.0)[0] for pk in pks]
    assert np.array_equal(models[0].J, models[1].J)
    assert not np.array_equal(models[0].h, models[1].h)
    m = models[0].meta["m"]
    bound = 3.0 * m * 24.0
    assert max(np.max(np.abs(models[0].J)), np.max(np.abs(models[0].h))) <= bound


def test_psi_slicing():
    pk, sk = waters.keygen(11, 2, RngStream(12))
    layout = waters.scheme_layout(pk)
    rows = waters.draw_training_set(pk, sk, 10, RngStream(13))
    for row in rows:
        msg = waters.psi_msg(layout, row)
        s1, s2 = waters.decode_signature(layout, row)
        assert waters.verify(pk, msg, (s1, s2))
    assert np.array_equal(waters.psi_msg(layout, -np.ones(rows.shape[1])), np.zeros(2))
    # message slice is independent of signature bits
    row = rows[0].copy()
    row[layout.ell_pk + layout.ell_msg:layout.ell_pk + layout.ell_msg + layout.ell_sig] *= -1
    assert np.array_equal(waters.psi_msg(layout, row), waters.psi_msg(layout, rows[0]))


def test_draw_training_set_contract(tmp_path):
    pk, sk = waters.keygen(11, 2, RngStream(14))
    assert waters.draw_training_set(pk, sk, 0, RngStream(15)).shape[0] == 0
    rows = waters.draw_training_set(pk, sk, 10_000, RngStream(16))
    layout = waters.scheme_layout(pk)
    msgs = (rows[:, layout.ell_pk:layout.ell_pk + 2] > 0) @ np.array([1, 2])
    counts = np.bincount(msgs, minlength=4)
    assert stats.chisquare(counts).pvalue > 0.001
    from hardising.circuits import validity_check
    circ = waters.compile_verifier(11, 2)
    assert all(validity_check(circ, row) for row in rows[:200])


def test_key_json_roundtrip():
    pk, sk = waters.keygen(251, 8, RngStream(17))
    pk2, sk2 = waters.key_from_json(waters.key_to_json(pk, sk))
    assert pk2 == pk and sk2 == sk
    pk3, sk3 = waters.key_from_json(waters.key_to_json(pk))
    assert pk3 == pk and sk3 is None
