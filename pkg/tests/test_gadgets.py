import itertools
import math

import numpy as np
import pytest
from scipy.special import logsumexp

from hardising import gadgets as G
from hardising.ising import IsingModel, brute_force_table, index_to_signs, pushforward, spectral_width
from hardising.scalars import choose_delta_r, solve_q_plus


def test_plan_sizing_examples():
    H = IsingModel(J=np.array([[0.0, 0.5], [0.5, 0.0]]), h=np.array([1.0, 0.0]))
    p = G.plan(H, gamma=2.0, eps=0.04)
    assert p.beta == 1.5
    assert p.t0 == (3, 1)
    assert p.edge_sizes == {(0, 1): 6}
    assert all(r % 2 == 1 for r in p.r)
    assert p.proof_valid

    Hz = IsingModel(J=np.zeros((2, 2)), h=np.zeros(2))
    pz = G.plan(Hz, gamma=2.0, eps=0.04)
    assert pz.t0 == (1, 1) and pz.edge_sizes == {}
    assert pz.h_tilde == (0.0, 0.0)


def test_plan_domain_errors():
    H = IsingModel(J=np.zeros((1, 1)), h=np.zeros(1))
    with pytest.raises(ValueError):
        G.plan(H, gamma=1.0, eps=0.04)
    with pytest.raises(ValueError):
        G.plan(H, gamma=2.0, eps=0.06)


def test_plan_respects_floors_and_overrides():
    H = IsingModel(J=np.zeros((1, 1)), h=np.array([0.3]))
    p = G.plan(H, gamma=2.0, eps=0.04, r_scale=0.0)
    assert p.r[0] == G.next_odd(p.r_floor[0]) or p.r[0] >= p.r_floor[0]
    assert not p.proof_valid
    po = G.plan(H, gamma=2.0, eps=0.04, r_override=5)
    assert po.r == (5,) and not po.proof_valid


def test_sector_sums_exact_small():
    bc = solve_q_plus(1.5)
    s = G.sector_sums(bc, 3, np.empty(0), delta=0.35)
    assert abs(math.exp(s.log_z_plus) - (3 * math.exp(0.25) + math.exp(2.25))) < 1e-10
    assert abs(s.log_z_plus - s.log_z_minus) < 1e-12
    assert abs(s.log_lambda_plus - s.log_lambda_minus) < 1e-12
    with pytest.raises(ValueError):
        G.sector_sums(bc, 4, np.empty(0), delta=0.3)


def test_sector_sums_match_brute_force():
    bc = solve_q_plus(1.5)
    fields = np.array([0.3, -0.2])
    r, t = 5, 2
    n = r + t
    J = (bc.beta / r) * np.ones((n, n))
    J[:t, :t] = 0.0  # S block carries no couplings
    h = np.concatenate([fields, np.zeros(r)])
    signs = index_to_signs(np.arange(1 << n, dtype=np.uint64), n)
    energies = 0.5 * np.einsum("bi,ij,bj->b", signs.astype(float), J, signs.astype(float)) + signs @ h
    mag_plus = signs[:, t:].sum(axis=1) > 0
    z_plus = logsumexp(energies[mag_plus])
    z_minus = logsumexp(energies[~mag_plus])
    s = G.sector_sums(bc, r, fields, delta=0.35)
    assert abs(s.log_z_plus - z_plus) < 1e-10
    assert abs(s.log_z_minus - z_minus) < 1e-10


def test_single_gadget_conditional_proof_regime():
    from hardising.harness import single_gadget_conditional

    bc = solve_q_plus(1.5)
    rng = np.random.default_rng(0)
    for t in (1, 2):
        _, r = choose_delta_r(bc, t, 0.05)
        fields = rng.uniform(-1.0, 1.0, t)
        for y in (1, -1):
            _, probs, q = single_gadget_conditional(bc, r, fields, y)
            assert np.all(probs <= (1 + 0.05) * q)
            assert np.all(probs >= (1 - 0.05) * q)


def test_sector_ratios_proof_regime():
    bc = solve_q_plus(1.5)
    for t in (1, 2):
        delta, r = choose_delta_r(bc, t, 0.05)
        sec = G.sector_sums(bc, r, np.full(t, 0.25), delta)
        for lz, ll in ((sec.log_z_plus, sec.log_lambda_plus), (sec.log_z_minus, sec.log_lambda_minus)):
            assert 0.95 <= math.exp(lz - sec.log_a - ll) <= 1.05


def test_materialize_layout_example():
    H = IsingModel(J=np.zeros((1, 1)), h=np.zeros(1))
    p = G.plan(H, gamma=2.0, eps=0.04, r_override=3)
    inst = G.materialize(p)
    assert inst.N == 4 and inst.s_total == 1
    assert inst.s_range(0) == (0, 1) and inst.r_range(0) == (1, 4)


def test_structured_matches_dense_energy(tiny_edge_instance):
    inst = tiny_edge_instance
    dense = inst.dense_export()
    rng = np.random.default_rng(1)
    for _ in range(100):
        s = rng.choice([-1.0, 1.0], inst.N)
        direct = 0.5 * s @ dense.J @ s + dense.h @ s
        assert abs(inst.energy(s) - direct) < 1e-9
    assert np.array_equal(dense.J, dense.J.T)


def test_width_and_matvec(tiny_edge_instance):
    from hardising.ising import width

    inst = tiny_edge_instance
    dense = inst.dense_export()
    assert abs(inst.width() - width(dense)) < 1e-12
    p = inst.plan
    bound = p.beta * (1 + max(inst.s_sizes[v] / p.r[v] for v in range(2)))
    bound += max(abs(w) for w in p.edge_weights.values())
    assert inst.width() <= bound + 1e-12
    rng = np.random.default_rng(2)
    x = rng.normal(0, 1, inst.N)
    assert np.max(np.abs(inst.matvec(x) - dense.J @ x)) < 1e-10


def test_spectral_width_in_band():
    rng = np.random.default_rng(3)
    for gamma in (1.25, 1.5, 2.0):
        J = np.array([[0.0, 0.4, -0.3], [0.4, 0.0, 0.2], [-0.3, 0.2, 0.0]])
        h = np.array([0.5, -0.4, 0.2])
        plan = G.plan(IsingModel(J=J, h=h), gamma=gamma, eps=0.04, r_scale=0.0)
        inst = G.materialize(plan)
        sw = inst.spectral_width()
        assert 1.0 < sw <= gamma + 1e-9
        lo, hi = inst.spectral_interval()
        assert lo - 1e-9 <= sw <= hi + 1e-9


def test_phase_readout_examples(single_gadget_instance):
    inst = single_gadget_instance
    s = np.array([1, 1, 1, -1, -1, 1], dtype=np.int8)  # R block sums to +1
    assert inst.phase_readout(s)[0] == 1
    assert inst.phase_readout(-s)[0] == -1
    assert inst.phase_readout(np.ones(inst.N, dtype=np.int8))[0] == 1
    with pytest.raises(ValueError):
        inst.phase_readout(np.ones(3))


def test_normalization_no_edges_A1_zero(single_gadget_instance):
    a0, a1, a = G.normalization_A(single_gadget_instance)
    assert a1 == 0.0 and a == a0


def test_normalization_identity_proof_valid(proof_valid_edge_instance):
    inst = proof_valid_edge_instance
    eps = inst.plan.eps
    a0, a1, log_a = G.normalization_A(inst)
    for code in range(4):
        y = np.array([1 if (code >> v) & 1 else -1 for v in range(2)])
        # hat-model product against A0 exp(h.y): within (1 +- eps/3)
        lz_hat = G.log_z_hat_product(inst, y)
        ratio_hat = math.exp(lz_hat - a0 - float(inst.plan.source.h @ y))
        assert 1 - eps / 3 <= ratio_hat <= 1 + eps / 3
        # full model against A mu_H(y): within (1 +- eps)
        lz = G.exact_phase_logZ(inst, y)
        ratio = math.exp(lz - log_a - G.log_mu_source(inst, y))
        assert 1 - eps <= ratio <= 1 + eps


def test_exact_phase_logZ_matches_brute_force(tiny_edge_instance):
    inst = tiny_edge_instance
    table = brute_force_table(inst.dense_export())
    codes = inst.phase_codes(np.arange(1 << inst.N, dtype=np.uint64))
    for code in range(4):
        y = np.array([1 if (code >> v) & 1 else -1 for v in range(2)])
        lz = G.exact_phase_logZ(inst, y)
        assert abs(lz - logsumexp(table.log_mass[codes == code])) < 1e-9


def test_phase_pushforward_matches_sector(tiny_edge_instance):
    inst = tiny_edge_instance
    table = brute_force_table(inst.dense_export())
    push = pushforward(table, inst.phase_codes, 2)
    for code in range(4):
        y = np.array([1 if (code >> v) & 1 else -1 for v in range(2)])
        assert abs(push.log_mass[code] - G.exact_phase_logZ(inst, y)) < 1e-9


def test_newton_identities():
    e = G.newton_elementary([1.0, 1.0])
    assert np.allclose(e, [1.0, 2.0, 1.0])
    rng = np.random.default_rng(4)
    for r in (3, 7, 12):
        w = rng.uniform(0.2, 2.0, r)
        e = G.newton_elementary(w)
        direct = np.zeros(r + 1)
        for k in range(r + 1):
            direct[k] = sum(np.prod(list(c)) for c in itertools.combinations(w, k))
        assert np.max(np.abs(e - direct) / np.maximum(direct, 1e-12)) < 1e-9
    with pytest.raises(G.InfeasibleError):
        G.newton_elementary(np.ones(53))


def test_pinned_fast_path_matches_newton():
    bc = solve_q_plus(1.5)
    rng = np.random.default_rng(5)
    for r in (5, 21, 51):
        h_prime = float(rng.uniform(-0.5, 0.5))
        for y in (1, -1):
            _, _, fast = G.pinned_sector_table(bc, r, h_prime, y)
            newton = G.pinned_logz_newton(bc, r, np.full(r, h_prime), y)
            assert abs(fast - newton) < 1e-9


def test_approx_pinned_mass_vertex_factor():
    H = IsingModel(J=np.zeros((1, 1)), h=np.zeros(1))
    plan = G.plan(H, gamma=2.0, eps=0.04, r_override=5)
    inst = G.materialize(plan)
    consts = plan.consts
    sigma_t = np.array([1], dtype=np.int8)
    log_gamma, _ = G.approx_pinned_mass(inst, sigma_t, np.array([1]))
    assert abs(math.exp(log_gamma) - consts.q_plus) < 1e-12


def test_approx_pinned_mass_full_vs_exact_proof_valid(proof_valid_edge_instance):
    inst = proof_valid_edge_instance
    eps = inst.plan.eps
    signs = index_to_signs(np.arange(1 << inst.s_total, dtype=np.uint64), inst.s_total)
    for code in (0, 3):
        y = np.array([1 if (code >> v) & 1 else -1 for v in range(2)])
        for row in signs:
            _, log_mu_hat = G.approx_pinned_mass(inst, row, y)
            exact = G.exact_pinned_mass(inst, row.astype(np.float64), y)
            assert 1 - eps <= math.exp(log_mu_hat - exact) <= 1 + eps


def test_approx_pinned_mass_empty_T_is_normalizer(tiny_edge_instance):
    inst = tiny_edge_instance
    y = np.array([1, -1])
    empty, _ = G.approx_pinned_mass(inst, np.zeros(inst.s_total, dtype=np.int8), y)
    signs = index_to_signs(np.arange(1 << inst.s_total, dtype=np.uint64), inst.s_total)
    alls = [G.approx_pinned_mass(inst, row, y)[0] for row in signs]
    assert abs(empty - logsumexp(np.asarray(alls))) < 1e-10


def test_flip_symmetry_zero_fields():
    H = IsingModel(J=np.array([[0.0, 0.15], [0.15, 0.0]]), h=np.zeros(2))
    plan = G.plan(H, gamma=2.0, eps=0.04, r_override=5)
    inst = G.materialize(plan)
    for code in range(4):
        y = np.array([1 if (code >> v) & 1 else -1 for v in range(2)])
        assert abs(G.exact_phase_logZ(inst, y) - G.exact_phase_logZ(inst, -y)) < 1e-9


def test_zero_diagonal_variant(tiny_edge_instance):
    plan = tiny_edge_instance.plan
    inst0 = G.materialize(plan, zero_diagonal=True)
    dense0 = inst0.dense_export()
    assert np.all(np.diag(dense0.J) == 0.0)
    t0 = brute_force_table(dense0)
    t1 = brute_force_table(tiny_edge_instance.dense_export())
    # same law, shifted log-masses
    shift = t1.log_mass - t0.log_mass
    assert np.max(np.abs(shift - shift[0])) < 1e-9
    assert abs(shift[0] - 0.5 * plan.beta * plan.m) < 1e-9
    codes = inst0.phase_codes(np.arange(1 << inst0.N, dtype=np.uint64))
    y = np.array([1, 1])
    assert abs(G.exact_phase_logZ(inst0, y) - logsumexp(t0.log_mass[codes == 3])) < 1e-9


def test_zero_diagonal_spectral_band():
    J = np.array([[0.0, 0.3], [0.3, 0.0]])
    h = np.array([0.4, -0.2])
    for gamma in (1.5, 2.0):
        plan = G.plan(IsingModel(J=J, h=h), gamma=gamma, eps=0.04,
                      r_scale=0.0, zero_diagonal=True)
        inst = G.materialize(plan)
        assert inst.zero_diagonal
        sw = inst.spectral_width()
        assert 1.0 < sw <= gamma + 1e-9


def test_quantize():
    rng = np.random.default_rng(6)
    A = rng.integers(-3, 4, (4, 4)).astype(float)
    J = A + A.T
    np.fill_diagonal(J, 0.0)
    m = IsingModel(J=J, h=rng.integers(-2, 3, 4).astype(float))
    q1 = G.quantize(m, 1)
    assert np.array_equal(q1.J, m.J) and np.array_equal(q1.h, m.h)

    m2 = IsingModel(J=np.zeros((4, 4)), h=rng.normal(0, 1, 4))
    M = 16
    q = G.quantize(m2, M)
    assert np.max(np.abs(q.h - m2.h)) <= 1 / (2 * M) + 1e-15
    assert q.meta["quantize"]["M"] == M

    B = rng.normal(0, 0.4, (6, 6))
    m3 = IsingModel(J=0.5 * (B + B.T), h=rng.normal(0, 1, 6))
    qq = G.quantize(m3, M)
    assert np.max(np.abs(qq.J - m3.J)) <= 1 / (2 * M) + 1e-15
    assert abs(spectral_width(qq) - spectral_width(m3)) <= m3.n / M + 1e-12


def test_sector_feasibility_guard():
    bc = solve_q_plus(1.5)
    with pytest.raises(G.InfeasibleError):
        G.sector_sums(bc, 10**12 + 1, np.empty(0), delta=1e-6)


def test_instance_json(tiny_edge_instance):
    import json

    doc = json.loads(tiny_edge_instance.to_json())
    assert doc["version"] == 1
    assert doc["beta"] == 1.5 and doc["epsilon"] == 0.04
    assert len(doc["vertices"]) == 2
    assert doc["vertices"][0]["blocks"][0]["to"] == 1
    assert doc["layout"]["N"] == tiny_edge_instance.N
    assert doc["proof_valid"] is False
    assert isinstance(doc["logA0"], float)
    doc2 = json.loads(tiny_edge_instance.to_json())
    assert doc2["provenance"] == doc["provenance"]
