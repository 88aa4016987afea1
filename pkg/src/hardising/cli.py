"""Command-line interface.

Subcommands: keygen, build-circuit, embed, gadgetize, sample, estimate-z,
eval-learner, experiment.  All randomness flows through --seed; per-stage
streams are derived by labeled splitting, so a fixed seed reproduces every
artifact byte for byte.  HARD_ISING_THREADS caps experiment parallelism.
"""

import argparse
import json
import sys

import numpy as np

from . import gadgets, harness, samplers, waters
from .ising import model_from_json, model_to_json
from .rng import RngStream


def _read(path):
    with open(path) as fh:
        return fh.read()


def _write(path, text):
    if path is None or path == "-":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _parse_phase(text):
    signs = {"+": 1, "1": 1, "-": -1, "0": -1}
    return np.array([signs[c] for c in text], dtype=np.int8)


def cmd_keygen(args):
    rng = RngStream(args.seed).split("keygen")
    pk, sk = waters.keygen(args.p, args.msg_bits, rng)
    _write(args.out, waters.key_to_json(pk, sk))
    return 0


def cmd_build_circuit(args):
    circuit = waters.compile_verifier(args.verify_p, args.msg_bits)
    _write(args.out, circuit.to_json())
    return 0


def cmd_embed(args):
    if args.key:
        pk, _ = waters.key_from_json(_read(args.key))
        model, _ = waters.build_mu_pk(pk, args.w)
    else:
        from .circuits import NandCircuit, default_weight, embed

        circuit = NandCircuit.from_json(_read(args.circuit))
        model = embed(circuit, args.w if args.w else default_weight(circuit))
    _write(args.out, model_to_json(model))
    return 0


def cmd_gadgetize(args):
    model = model_from_json(_read(args.model))
    plan = gadgets.plan(model, gamma=args.gamma, eps=args.epsilon,
                        r_scale=args.r_scale, zero_diagonal=args.zero_diagonal)
    instance = gadgets.materialize(plan)
    _write(args.out, instance.to_json())
    return 0


def cmd_sample(args):
    pk, sk = waters.key_from_json(_read(args.key))
    if sk is None:
        raise SystemExit("sample: key file must include the secret key")
    instance = None
    if args.level == "gadget":
        model, _ = waters.build_mu_pk(pk, args.w)
        plan = gadgets.plan(model, gamma=args.gamma, eps=args.epsilon,
                            r_scale=args.r_scale, zero_diagonal=args.zero_diagonal)
        instance = gadgets.materialize(plan)
    if args.format == "bin":
        harness.gen_training(args.level, pk, sk, instance, args.count,
                             delta=args.delta, seed=args.seed, out=args.out)
    else:
        rows = harness.gen_training(args.level, pk, sk, instance, args.count,
                                    delta=args.delta, seed=args.seed)
        n = rows.shape[1] if rows.size else (
            instance.N if instance is not None else waters.compile_verifier(pk.p, pk.ell).m)
        _write(args.out, json.dumps({"n": n, "count": int(rows.shape[0]),
                                     "configs": rows.tolist()}))
    return 0


def cmd_estimate_z(args):
    model = model_from_json(_read(args.model))
    plan = gadgets.plan(model, gamma=args.gamma, eps=args.epsilon,
                        r_scale=args.r_scale, zero_diagonal=args.zero_diagonal)
    instance = gadgets.materialize(plan)
    y = _parse_phase(args.phase)
    rng = RngStream(args.seed).split("estimate-z")
    result = samplers.estimate_Z_phase(instance, y, args.eps_js, args.delta, rng,
                                       method=args.method, max_samples=args.max_samples)
    _write(args.out, json.dumps({
        "log_z": result.log_value, "epsilon": result.epsilon,
        "delta": result.delta, "repetitions": result.repetitions,
    }))
    return 0


def cmd_eval_learner(args):
    pk, _ = waters.key_from_json(_read(args.key))
    _, training = samplers.read_sample_file(args.training)
    _, outputs = samplers.read_sample_file(args.outputs)
    instance = None
    if args.level == "gadget":
        model, _ = waters.build_mu_pk(pk, args.w)
        plan = gadgets.plan(model, gamma=args.gamma, eps=args.epsilon,
                            r_scale=args.r_scale, zero_diagonal=args.zero_diagonal)
        instance = gadgets.materialize(plan)
    report = harness.eval_learner(pk, training, outputs, level=args.level,
                                  instance=instance, recover_pk=args.recover_pk)
    doc = {
        "total": report.total,
        "memorized": report.n_memorized,
        "hallucinated": report.n_hallucinated,
        "hallucinated_only": report.n_hallucinated_only,
        "forged": report.n_forged,
        "other": report.n_other,
        "fractions": report.fractions,
        "pk_disagreement": report.pk_disagreement,
    }
    _write(args.out, json.dumps(doc, indent=1))
    return 0


def cmd_experiment(args):
    params = {}
    if args.suite == "constants":
        params["beta"] = args.beta
    elif args.suite == "single-gadget":
        params = {"beta": args.beta, "t": args.t, "eps": args.epsilon_sg,
                  "r_list": [int(x) for x in args.r.split(",")]}
    elif args.suite == "phase-pushforward":
        params = {"r_list": [int(x) for x in args.r.split(",")]}
    elif args.suite == "spectral":
        params = {"seed": args.seed, "zero_diagonal": args.zero_diagonal}
    elif args.suite in ("estimators", "kernels"):
        params = {"seed": args.seed}
    rows, ok = harness.run_experiment(args.suite, out=args.out, **params)
    if args.out is None:
        sys.stdout.write(harness._rows_to_csv(rows))
    sys.stdout.write(f"# suite={args.suite} assertions={'pass' if ok else 'FAIL'}\n")
    return 0 if ok else 1


def _add_common(sp, *names):
    if "seed" in names:
        sp.add_argument("--seed", type=int, default=0)
    if "out" in names:
        sp.add_argument("--out", default=None)
    if "gadget" in names:
        sp.add_argument("--gamma", type=float, default=2.0)
        sp.add_argument("--epsilon", type=float, default=0.04)
        sp.add_argument("--r-scale", type=float, default=1.0)
        sp.add_argument("--zero-diagonal", action="store_true")
        sp.add_argument("--w", type=float, default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="hardising")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("keygen", help="generate a toy key pair")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--msg-bits", type=int, required=True)
    _add_common(sp, "seed", "out")
    sp.set_defaults(fn=cmd_keygen)

    sp = sub.add_parser("build-circuit", help="compile the verifier circuit")
    sp.add_argument("--verify-p", type=int, required=True)
    sp.add_argument("--msg-bits", type=int, required=True)
    _add_common(sp, "out")
    sp.set_defaults(fn=cmd_build_circuit)

    sp = sub.add_parser("embed", help="embed a circuit or key into an Ising model")
    sp.add_argument("--circuit", default=None)
    sp.add_argument("--key", default=None)
    sp.add_argument("--w", type=float, default=None)
    _add_common(sp, "out")
    sp.set_defaults(fn=cmd_embed)

    sp = sub.add_parser("gadgetize", help="near-critical gadget transform of a model")
    sp.add_argument("--model", required=True)
    _add_common(sp, "out", "gadget")
    sp.set_defaults(fn=cmd_gadgetize)

    sp = sub.add_parser("sample", help="draw training samples")
    sp.add_argument("--key", required=True)
    sp.add_argument("--level", choices=["mu", "gadget"], default="mu")
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--delta", type=float, default=0.01)
    sp.add_argument("--format", choices=["bin", "json"], default="bin")
    _add_common(sp, "seed", "out", "gadget")
    sp.set_defaults(fn=cmd_sample)

    sp = sub.add_parser("estimate-z", help="estimate Z restricted to a phase vector")
    sp.add_argument("--model", required=True)
    sp.add_argument("--phase", required=True, help="e.g. '+-+'")
    sp.add_argument("--eps-js", type=float, default=0.05)
    sp.add_argument("--delta", type=float, default=0.05)
    sp.add_argument("--method", choices=["importance", "js"], default="importance")
    sp.add_argument("--max-samples", type=int, default=None)
    _add_common(sp, "seed", "out", "gadget")
    sp.set_defaults(fn=cmd_estimate_z)

    sp = sub.add_parser("eval-learner", help="memorize/hallucinate/forge report")
    sp.add_argument("--key", required=True)
    sp.add_argument("--training", required=True)
    sp.add_argument("--outputs", required=True)
    sp.add_argument("--level", choices=["mu", "gadget"], default="mu")
    sp.add_argument("--recover-pk", action="store_true")
    _add_common(sp, "out", "gadget")
    sp.set_defaults(fn=cmd_eval_learner)

    sp = sub.add_parser("experiment", help="run a named experiment suite")
    sp.add_argument("suite", choices=sorted(harness.SUITES))
    sp.add_argument("--beta", type=float, default=1.5)
    sp.add_argument("--t", type=int, default=1)
    sp.add_argument("--r", default="51,101,201")
    sp.add_argument("--epsilon-sg", type=float, default=0.05)
    sp.add_argument("--zero-diagonal", action="store_true")
    _add_common(sp, "seed", "out")
    sp.set_defaults(fn=cmd_experiment)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
