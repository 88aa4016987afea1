"""End-to-end orchestration: pipeline builds, training-set generation, the
memorize/hallucinate/forge evaluator, and the experiment suites behind the
CLI.

Classification of a learner output y against a training multiset X:
memorized if the decoded message collides with a training message (checked
first, mirroring the union event "Psi-collision or hallucination"), else
hallucinated if the decoded configuration is not a valid encoding under the
public key, else forged (valid encoding of a fresh message).
"""

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import circuits, gadgets, samplers, waters
from .ising import IsingModel, model_to_json
from .rng import RngStream
from .scalars import choose_delta_r, solve_q_plus


def thread_budget() -> int:
    try:
        return max(1, int(os.environ.get("HARD_ISING_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class EvalReport:
    total: int
    n_memorized: int
    n_hallucinated: int        # all trace-invalid outputs
    n_hallucinated_only: int   # invalid and not memorized
    n_forged: int              # valid encoding, fresh message
    n_other: int
    pk_disagreement: float | None

    @property
    def fractions(self) -> dict:
        t = max(self.total, 1)
        return {
            "memorized": self.n_memorized / t,
            "hallucinated_only": self.n_hallucinated_only / t,
            "forged": self.n_forged / t,
            "other": self.n_other / t,
        }

    def check_partition(self) -> bool:
        parts = self.n_memorized + self.n_hallucinated_only + self.n_forged + self.n_other
        frac_sum = sum(self.fractions.values())
        return parts == self.total and abs(frac_sum - 1.0) < 1e-12


def pipeline_build(p: int, ell: int, w: float | None, gamma: float, eps: float,
                   seed: int, outdir: str | None = None, r_scale: float = 1.0,
                   zero_diagonal: bool = False) -> dict:
    """keygen -> verifier circuit -> pinned embedding -> gadget plan.

    Writes key/circuit/model/instance JSON plus a manifest of content
    hashes when outdir is given.  Deterministic under the seed.
    """
    rng = RngStream(seed).split("keygen")
    pk, sk = waters.keygen(p, ell, rng)
    circuit = waters.compile_verifier(p, ell)
    model, layout = waters.build_mu_pk(pk, w)
    plan = gadgets.plan(model, gamma=gamma, eps=eps, r_scale=r_scale,
                        zero_diagonal=zero_diagonal)
    instance = gadgets.materialize(plan)
    artifacts = {
        "pk": pk, "sk": sk, "circuit": circuit, "model": model,
        "layout": layout, "plan": plan, "instance": instance,
    }
    if outdir is not None:
        os.makedirs(outdir, exist_ok=True)
        texts = {
            "keys.json": waters.key_to_json(pk, sk),
            "verifier.json": circuit.to_json(),
            "mu_pk.json": model_to_json(model),
            "instance.json": instance.to_json(),
        }
        manifest = {}
        for name, text in texts.items():
            path = os.path.join(outdir, name)
            with open(path, "w") as fh:
                fh.write(text)
            manifest[name] = hashlib.sha256(text.encode()).hexdigest()
        manifest_path = os.path.join(outdir, "manifest.json")
        with open(manifest_path, "w") as fh:
            json.dump({"seed": seed, "p": p, "ell": ell, "gamma": gamma,
                       "epsilon": eps, "hashes": manifest}, fh, indent=1, sort_keys=True)
        artifacts["files"] = sorted(texts) + ["manifest.json"]
    return artifacts


def gen_training(level: str, pk, sk, instance, count: int, delta: float,
                 seed: int, out: str | None = None, eps_js: float = 0.01,
                 stream_factor: int = 4, max_samples: int | None = None):
    """Training samples at the trace level ("mu") or instance level ("gadget").

    mu: uniform messages signed under sk, encoded as traces.  gadget: the
    same trace stream pushed through the rejection reduction, yielding
    configurations of the near-critical instance.
    """
    if count < 0:
        raise ValueError("gen_training: count must be >= 0")
    rng = RngStream(seed).split(f"train-{level}")
    if level == "mu":
        rows = waters.draw_training_set(pk, sk, count, rng)
        n = rows.shape[1] if count else waters.compile_verifier(pk.p, pk.ell).m
    elif level == "gadget":
        if instance is None:
            raise ValueError("gen_training: gadget level needs an instance")
        stream_n = max(stream_factor * count, count + 8)
        stream = waters.draw_training_set(pk, sk, stream_n, rng) if count else []
        rows, _ = ([], None) if count == 0 else samplers.rejection_reduce(
            stream, instance, count, eps_js, delta, rng, mode="real",
            max_samples=max_samples)
        rows = np.asarray(rows, dtype=np.int8).reshape(count, -1) if count else np.empty((0, instance.N), dtype=np.int8)
        n = instance.N
    else:
        raise ValueError(f"gen_training: unknown level {level!r}")
    if out is not None:
        samplers.write_sample_file(out, n, rows)
    return rows


def _majority_pk_recovery(layout, training_m_level: np.ndarray):
    """Majority vote per public-key coordinate; ties break to +1."""
    votes = training_m_level[:, : layout.ell_pk].sum(axis=0)
    return np.where(votes >= 0, 1, -1).astype(np.int8)


def eval_learner(pk, training_rows: np.ndarray, output_rows: np.ndarray,
                 level: str = "mu", instance=None,
                 recover_pk: bool = False) -> EvalReport:
    """Classify learner outputs as memorized / hallucinated / forged.

    Gadget-level rows are first decoded through the phase readout.  With
    recover_pk the public-key coordinates are recovered from the training
    rows by majority vote and the recovery disagreement rate reported.
    """
    circuit = waters.compile_verifier(pk.p, pk.ell)
    layout = waters.scheme_layout(pk)
    if level == "gadget":
        if instance is None:
            raise ValueError("eval_learner: gadget level needs an instance")
        training = np.array([instance.phase_readout(r) for r in training_rows], dtype=np.int8)
        outputs = np.array([instance.phase_readout(r) for r in output_rows], dtype=np.int8)
    elif level == "mu":
        training = np.asarray(training_rows, dtype=np.int8)
        outputs = np.asarray(output_rows, dtype=np.int8)
    else:
        raise ValueError(f"eval_learner: unknown level {level!r}")
    if training.size and training.shape[1] != circuit.m:
        raise ValueError("eval_learner: training width mismatch")
    if outputs.size and outputs.shape[1] != circuit.m:
        raise ValueError("eval_learner: output width mismatch")

    true_pk_signs = waters.pk_bits(pk).astype(np.int8) * 2 - 1
    disagreement = None
    pk_signs = true_pk_signs
    if recover_pk:
        if training.size == 0:
            raise ValueError("eval_learner: pk recovery needs training rows")
        recovered = _majority_pk_recovery(layout, training)
        disagreement = float(np.mean(recovered != true_pk_signs))
        pk_signs = recovered

    train_msgs = {waters.psi_msg(layout, row).tobytes() for row in training}
    pinned = {i: int(pk_signs[i]) for i in range(layout.ell_pk)}
    pinned[circuit.m - 1] = 1

    n_mem = n_hall = n_hall_only = n_forged = n_other = 0
    for row in outputs:
        msg = waters.psi_msg(layout, row).tobytes()
        memorized = msg in train_msgs
        valid = circuits.validity_check(circuit, row, pinned=pinned)
        if not valid:
            n_hall += 1
        if memorized:
            n_mem += 1
        elif not valid:
            n_hall_only += 1
        else:
            n_forged += 1
    return EvalReport(
        total=outputs.shape[0], n_memorized=n_mem, n_hallucinated=n_hall,
        n_hallucinated_only=n_hall_only, n_forged=n_forged, n_other=n_other,
        pk_disagreement=disagreement,
    )


# ---------------------------------------------------------------------------
# Experiment suites.


def _rows_to_csv(rows, path=None):
    if not rows:
        return ""
    cols = list(rows[0])
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(str(row[c]) for c in cols))
    text = "\n".join(lines) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def single_gadget_conditional(consts, r: int, fields, y: int):
    """Exact P[sigma_S = tau | phase = y] for every tau, via sector sums.

    The tau dependence enters only through tau.f and sum(tau), so each
    probability is a pinned half-space total at field beta*sum(tau)/r.
    """
    from .ising import index_to_signs

    fields = np.asarray(fields, dtype=np.float64)
    t = fields.size
    if t > 12:
        raise ValueError("single_gadget_conditional: t too large")
    taus = index_to_signs(np.arange(1 << t, dtype=np.uint64), t).astype(np.float64)
    logz = np.empty(1 << t)
    for i, tau in enumerate(taus):
        s = float(tau.sum())
        _, _, tot = gadgets.pinned_sector_table(consts, r, consts.beta * s / r, y)
        logz[i] = float(tau @ fields) + tot
    from scipy.special import logsumexp

    probs = np.exp(logz - logsumexp(logz))
    a = fields + y * consts.beta * consts.gap
    log_q = taus @ a - np.sum(gadgets.log2cosh(a))
    q = np.exp(log_q)
    return taus, probs, q


def experiment_single_gadget(beta: float, t: int, r_list, eps: float = 0.05,
                             field_value: float = 0.25):
    """Sector and conditional-law accuracy of one gadget as r grows.

    Reports the windowed sector ratio Z/(a lambda) (window at the
    fluctuation scale below the proof-valid regime), the window-free phase
    balance (Z+/Z-) vs (lambda+/lambda-), and the worst conditional/product
    ratio over all S assignments.
    """
    consts = solve_q_plus(beta)
    delta, r_rule = choose_delta_r(consts, t, eps)
    fields = np.full(t, field_value)
    rows = []
    for r in r_list:
        r = int(r) | 1
        delta_eff = max(delta, 1.0 / math.sqrt(r * consts.C1), 1.5 / r)
        sec = gadgets.sector_sums(consts, r, fields, delta_eff)
        err_plus = abs(math.exp(sec.log_z_plus - sec.log_a - sec.log_lambda_plus) - 1.0)
        err_minus = abs(math.exp(sec.log_z_minus - sec.log_a - sec.log_lambda_minus) - 1.0)
        balance_err = abs(math.exp((sec.log_z_plus - sec.log_z_minus)
                                   - (sec.log_lambda_plus - sec.log_lambda_minus)) - 1.0)
        cond_err = 0.0
        for y in (1, -1):
            _, probs, q = single_gadget_conditional(consts, r, fields, y)
            cond_err = max(cond_err, float(np.max(np.abs(probs / q - 1.0))))
        rows.append({
            "beta": beta, "t": t, "r": r, "eps": eps, "delta": delta_eff,
            "sector_ratio_err": max(err_plus, err_minus),
            "balance_ratio_err": balance_err,
            "conditional_ratio_err": cond_err,
            "proof_r": r_rule,
        })
    return rows


def experiment_phase_pushforward(r_list=(5, 9, 13), gamma: float = 2.0,
                                 eps: float = 0.04):
    """Sup-ratio error of the phase law against the source law as r grows.

    The instance is a two-vertex model with an edge and mixed fields; Z(y)
    is sector-exact (sum of exact pinned masses over S), cross-checked
    against brute force where N fits the enumeration guard.
    """
    from scipy.special import logsumexp

    from .ising import brute_force_table

    H = IsingModel(J=np.array([[0.0, 0.2], [0.2, 0.0]]), h=np.array([0.3, -0.2]))
    rows = []
    for r in r_list:
        plan = gadgets.plan(H, gamma=gamma, eps=eps, r_override=int(r))
        inst = gadgets.materialize(plan)
        log_z, log_mu = [], []
        for code in range(4):
            y = np.array([1 if (code >> v) & 1 else -1 for v in range(2)])
            log_z.append(gadgets.exact_phase_logZ(inst, y))
            log_mu.append(gadgets.log_mu_source(inst, y))
        log_z, log_mu = np.array(log_z), np.array(log_mu)
        probs = np.exp(log_z - logsumexp(log_z))
        target = np.exp(log_mu - logsumexp(log_mu))
        sup_err = float(np.max(np.abs(probs / target - 1.0)))
        _, _, log_a = gadgets.normalization_A(inst)
        z_ratio_err = float(np.max(np.abs(np.exp(log_z - log_a - log_mu) - 1.0)))
        bf_gap = None
        if inst.N <= 20:
            table = brute_force_table(inst.dense_export())
            codes = inst.phase_codes(np.arange(1 << inst.N, dtype=np.uint64))
            log_z_bf = np.array([logsumexp(table.log_mass[codes == c]) for c in range(4)])
            bf_gap = float(np.max(np.abs(log_z_bf - log_z)))
        rows.append({"r": int(r) | 1, "N": inst.N, "sup_ratio_err": sup_err,
                     "z_ratio_err": z_ratio_err,
                     "brute_force_gap": bf_gap if bf_gap is not None else ""})
    return rows


def experiment_spectral(gammas=(1.25, 1.5, 2.0), n_models: int = 10, seed: int = 0,
                        zero_diagonal: bool = False, m_max: int = 4):
    """Spectral width of materialized micro instances against the band."""
    rng = np.random.default_rng(seed)
    jobs = []
    for gamma in gammas:
        for i in range(n_models):
            m = int(rng.integers(1, m_max + 1))
            J = rng.normal(0.0, 0.4, (m, m))
            J = 0.5 * (J + J.T)
            np.fill_diagonal(J, 0.0)
            h = rng.normal(0.0, 0.4, m)
            scale = max(np.abs(J).sum(axis=1) + np.abs(h))
            if scale > 2.0:
                J *= 2.0 / scale
                h *= 2.0 / scale
            jobs.append((gamma, i, IsingModel(J=J, h=h)))

    def run(job):
        gamma, i, H = job
        plan = gadgets.plan(H, gamma=gamma, eps=0.04, r_scale=0.0,
                            zero_diagonal=zero_diagonal)
        inst = gadgets.materialize(plan)
        sw = inst.spectral_width()
        return {"gamma": gamma, "model": i, "m": H.n, "N": inst.N,
                "spectral_width": sw, "width": inst.width(),
                "in_band": int(1.0 < sw <= gamma + 1e-9),
                "zero_diagonal": int(zero_diagonal)}

    workers = thread_budget()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]
    return rows


def experiment_constants(beta: float):
    c = solve_q_plus(beta)
    return [{
        "beta": c.beta, "q_plus": c.q_plus, "q_minus": c.q_minus,
        "alpha_plus": c.alpha_plus, "C1": c.C1, "C2": c.C2, "C": c.C,
        "delta0": c.delta0,
    }]


def experiment_estimators(seed: int = 0):
    """Cross-check the three Z paths on a desk instance and a plain model."""
    from scipy.special import logsumexp

    from .ising import brute_force_table

    H = IsingModel(J=np.array([[0.0, 0.05], [0.05, 0.0]]), h=np.array([0.2, -0.1]))
    plan = gadgets.plan(H, gamma=2.0, eps=0.04, r_override=7)
    inst = gadgets.materialize(plan)
    table = brute_force_table(inst.dense_export())
    codes = inst.phase_codes(np.arange(1 << inst.N, dtype=np.uint64))
    y = np.array([1, -1], dtype=np.int8)
    truth = float(logsumexp(table.log_mass[codes == 1]))
    imp = samplers.estimate_Z_phase(inst, y, 0.05, 0.05, RngStream(seed, 1))
    js = samplers.estimate_Z_phase(inst, y, 0.3, 0.4, RngStream(seed, 2), method="js")
    rows = [
        {"path": "brute", "log_z": truth, "rel_err": 0.0},
        {"path": "importance", "log_z": imp.log_value,
         "rel_err": math.exp(imp.log_value - truth) - 1.0},
        {"path": "js", "log_z": js.log_value,
         "rel_err": math.exp(js.log_value - truth) - 1.0},
    ]
    rows.append({"path": "mutual", "log_z": imp.log_value - js.log_value,
                 "rel_err": math.exp(imp.log_value - js.log_value) - 1.0})
    return rows


def experiment_kernels(seed: int = 0):
    """Benchmark the compiled kernels against the pure fallbacks."""
    import time

    from . import kernels

    rng = np.random.default_rng(seed)
    rows = []
    n = 18
    J = rng.normal(0, 0.2, (n, n))
    J = 0.5 * (J + J.T)
    h = rng.normal(0, 0.2, n)

    t0 = time.perf_counter()
    lane = kernels.gray_energies(np.ascontiguousarray(J), h)
    t_lane = time.perf_counter() - t0
    t0 = time.perf_counter()
    fb = kernels.fallback.gray_energies(J, h)
    t_fb = time.perf_counter() - t0
    rows.append({"kernel": f"gray_energies(n={n})", "compiled_lane": int(kernels.COMPILED),
                 "lane_s": t_lane, "fallback_s": t_fb,
                 "max_abs_diff": float(np.max(np.abs(lane - fb))), "tol": 1e-9})

    r, k, steps = 24, 9, 20000
    w = rng.uniform(0.5, 2.0, r)
    u = rng.random(2 * steps)
    mem0 = np.zeros(r, dtype=np.uint8)
    mem0[:k] = 1
    t0 = time.perf_counter()
    a = kernels.downup_chain(w, mem0.copy(), k, steps, u)
    t_lane = time.perf_counter() - t0
    t0 = time.perf_counter()
    b = kernels.fallback.downup_chain(w, mem0.copy(), k, steps, u)
    t_fb = time.perf_counter() - t0
    rows.append({"kernel": f"downup_chain(r={r},steps={steps})",
                 "compiled_lane": int(kernels.COMPILED),
                 "lane_s": t_lane, "fallback_s": t_fb,
                 "max_abs_diff": float(np.max(np.abs(np.asarray(a, dtype=np.int64) - np.asarray(b, dtype=np.int64)))),
                 "tol": 0.0})

    circuit = waters.compile_verifier(11, 2)
    batch = rng.integers(0, 2, size=(20000, circuit.n_inputs)).astype(np.uint8)
    tr1 = np.empty((batch.shape[0], circuit.m), dtype=np.uint8)
    tr1[:, : circuit.n_inputs] = batch
    tr2 = tr1.copy()
    gi = np.ascontiguousarray(circuit.gates[:, 0])
    gj = np.ascontiguousarray(circuit.gates[:, 1])
    t0 = time.perf_counter()
    kernels.eval_traces_batch(gi, gj, tr1, circuit.n_inputs)
    t_lane = time.perf_counter() - t0
    t0 = time.perf_counter()
    kernels.fallback.eval_traces_batch(gi, gj, tr2, circuit.n_inputs)
    t_fb = time.perf_counter() - t0
    rows.append({"kernel": f"eval_traces(batch=20000,gates={circuit.n_gates})",
                 "compiled_lane": int(kernels.COMPILED),
                 "lane_s": t_lane, "fallback_s": t_fb,
                 "max_abs_diff": float(np.max(np.abs(tr1.astype(np.int16) - tr2.astype(np.int16)))),
                 "tol": 0.0})
    return rows


SUITES = {
    "single-gadget": experiment_single_gadget,
    "phase-pushforward": experiment_phase_pushforward,
    "spectral": experiment_spectral,
    "constants": experiment_constants,
    "estimators": experiment_estimators,
    "kernels": experiment_kernels,
}


def run_experiment(name: str, out: str | None = None, **params):
    """Dispatch a named suite; returns (rows, all-assertions-ok)."""
    if name not in SUITES:
        raise ValueError(f"unknown experiment suite {name!r}; choices: {sorted(SUITES)}")
    rows = SUITES[name](**params)
    ok = True
    if name == "single-gadget":
        for col in ("sector_ratio_err", "balance_ratio_err", "conditional_ratio_err"):
            errs = [r[col] for r in rows]
            ok = ok and all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))
    elif name == "phase-pushforward":
        errs = [r["sup_ratio_err"] for r in rows]
        ok = all(e2 <= e1 + 1e-12 for e1, e2 in zip(errs, errs[1:]))
    elif name == "spectral":
        ok = all(r["in_band"] == 1 and r["width"] <= 6.0 for r in rows)
    elif name == "estimators":
        ok = all(abs(r["rel_err"]) <= 0.1 for r in rows)
    elif name == "kernels":
        ok = all(r["max_abs_diff"] <= r["tol"] for r in rows)
    _rows_to_csv(rows, out)
    return rows, ok
