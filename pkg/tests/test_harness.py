import json

import numpy as np
import pytest

from hardising import gadgets, harness, samplers, waters
from hardising.circuits import eval_trace
from hardising.rng import RngStream


def test_pipeline_build_deterministic(tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    art1 = harness.pipeline_build(3, 1, None, 1.5, 0.04, seed=11, outdir=str(out1))
    art2 = harness.pipeline_build(3, 1, None, 1.5, 0.04, seed=11, outdir=str(out2))
    for name in art1["files"]:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    art3 = harness.pipeline_build(3, 1, None, 1.5, 0.04, seed=12, outdir=str(tmp_path / "c"))
    assert (out1 / "keys.json").read_text() != (tmp_path / "c" / "keys.json").read_text()

    inst = art1["instance"]
    lo, hi = inst.spectral_interval()
    assert 1.0 < lo and hi <= 1.5 + 1e-9
    doc = json.loads((out1 / "instance.json").read_text())
    assert doc["logA0"] is None  # crypto-scale r: normalization infeasible by design
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert set(manifest["hashes"]) == {"keys.json", "verifier.json", "mu_pk.json", "instance.json"}


def test_gen_training_mu_level_all_valid(tmp_path):
    pk, sk = waters.keygen(11, 2, RngStream(1).split("keygen"))
    out = tmp_path / "train.bin"
    rows = harness.gen_training("mu", pk, sk, None, 2000, delta=0.01, seed=5, out=str(out))
    from hardising.circuits import validity_check

    circuit = waters.compile_verifier(11, 2)
    assert all(validity_check(circuit, row) for row in rows)
    n, back = samplers.read_sample_file(out)
    assert n == circuit.m and np.array_equal(back, rows)
    empty = harness.gen_training("mu", pk, sk, None, 0, delta=0.01, seed=5,
                                 out=str(tmp_path / "empty.bin"))
    n0, rows0 = samplers.read_sample_file(tmp_path / "empty.bin")
    assert n0 == circuit.m and rows0.shape == (0, circuit.m)


def test_gen_training_gadget_infeasible_at_crypto_scale():
    art = harness.pipeline_build(3, 1, None, 1.5, 0.04, seed=3)
    with pytest.raises(gadgets.InfeasibleError):
        harness.gen_training("gadget", art["pk"], art["sk"], art["instance"],
                             4, delta=0.05, seed=4)


def _mu_rows_to_gadget_rows(instance, rows):
    """Lift m-level rows by copying each vertex sign across its gadget."""
    out = np.empty((rows.shape[0], instance.N), dtype=np.int8)
    for v in range(instance.m):
        g0 = instance.gadget_start[v]
        g1 = g0 + instance.s_sizes[v] + instance.plan.r[v]
        out[:, g0:g1] = rows[:, v][:, None]
    return out


def canonical_setup():
    pk, sk = waters.keygen(3, 1, RngStream(9).split("keygen"))
    circuit = waters.compile_verifier(3, 1)
    layout = waters.scheme_layout(pk)
    return pk, sk, circuit, layout


def test_eval_learner_echo_memorizes():
    pk, sk, circuit, layout = canonical_setup()
    training = waters.draw_training_set(pk, sk, 50, RngStream(10))
    report = harness.eval_learner(pk, training, training, level="mu")
    assert report.total == 50 and report.n_memorized == 50
    assert report.check_partition()
    assert report.fractions["memorized"] == 1.0


def test_eval_learner_uniform_random_hallucinates():
    pk, sk, circuit, layout = canonical_setup()
    training = waters.draw_training_set(pk, sk, 20, RngStream(11))
    rng = RngStream(12)
    outputs = rng.generator.choice(np.array([-1, 1], dtype=np.int8), size=(1000, circuit.m))
    report = harness.eval_learner(pk, training, outputs, level="mu")
    assert report.n_hallucinated / report.total >= 0.99
    assert report.check_partition()


def test_eval_learner_challenger_forges():
    pk, sk, circuit, layout = canonical_setup()
    pkb = waters.pk_bits(pk)
    rng = RngStream(13)

    def encode(msg_bits):
        s1, s2 = waters.sign(sk, pk, np.asarray(msg_bits), rng)
        sig = np.array(waters.label_to_bits(s1, layout.k) + waters.label_to_bits(s2, layout.k),
                       dtype=np.uint8)
        inp = np.concatenate([pkb, np.asarray(msg_bits, dtype=np.uint8), sig])
        return eval_trace(circuit, inp).astype(np.int8) * 2 - 1

    training = np.array([encode([0]) for _ in range(10)])
    outputs = np.array([encode([1]) for _ in range(25)])
    report = harness.eval_learner(pk, training, outputs, level="mu")
    assert report.n_forged == 25 and report.fractions["forged"] == 1.0
    assert report.check_partition()


def test_eval_learner_pk_recovery():
    pk, sk, circuit, layout = canonical_setup()
    training = waters.draw_training_set(pk, sk, 30, RngStream(14))
    report = harness.eval_learner(pk, training, training[:5], level="mu", recover_pk=True)
    assert report.pk_disagreement == 0.0
    assert report.n_memorized == 5


def test_eval_learner_gadget_level_decode():
    pk, sk, circuit, layout = canonical_setup()
    model, meta = waters.build_mu_pk(pk, w=12.0)
    plan = gadgets.plan(model, gamma=2.0, eps=0.04, r_override=1)
    inst = gadgets.materialize(plan)
    training = waters.draw_training_set(pk, sk, 8, RngStream(15))
    g_train = _mu_rows_to_gadget_rows(inst, training)
    report = harness.eval_learner(pk, g_train, g_train[:4], level="gadget", instance=inst)
    assert report.n_memorized == 4 and report.check_partition()


def test_eval_report_partition_on_adversarial_mix():
    pk, sk, circuit, layout = canonical_setup()
    training = waters.draw_training_set(pk, sk, 6, RngStream(16))
    rng = RngStream(17)
    garbage = rng.generator.choice(np.array([-1, 1], dtype=np.int8), size=(7, circuit.m))
    outputs = np.concatenate([training[:3], garbage])
    report = harness.eval_learner(pk, training, outputs, level="mu")
    assert report.total == 10
    assert report.n_memorized + report.n_hallucinated_only + report.n_forged + report.n_other == 10
    assert abs(sum(report.fractions.values()) - 1.0) < 1e-12


def test_experiment_constants():
    rows, ok = harness.run_experiment("constants", beta=1.5)
    assert ok and abs(rows[0]["q_plus"] - 0.92930) < 1e-4


def test_experiment_estimators_and_kernels(tmp_path):
    rows, ok = harness.run_experiment("estimators", out=str(tmp_path / "est.csv"))
    assert ok
    text = (tmp_path / "est.csv").read_text()
    assert text.startswith("path,") and "importance" in text
    rows, ok = harness.run_experiment("kernels")
    assert ok


def test_experiment_spectral_small():
    rows, ok = harness.run_experiment("spectral", gammas=(1.5,), n_models=3, seed=1)
    assert ok and all(1.0 < r["spectral_width"] <= 1.5 + 1e-9 for r in rows)


def test_experiment_unknown_suite():
    with pytest.raises(ValueError, match="unknown experiment suite"):
        harness.run_experiment("nope")


def test_thread_budget(monkeypatch):
    monkeypatch.setenv("HARD_ISING_THREADS", "3")
    assert harness.thread_budget() == 3
    monkeypatch.setenv("HARD_ISING_THREADS", "junk")
    assert harness.thread_budget() == 1
