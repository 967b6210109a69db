"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 contract violation, 4 resource or
learner failure.  Reports are JSON; the ``timestamp`` field is the only
part that differs between runs with the same flags and seed.
"""

import argparse
import datetime
import math
import os
import sys

import numpy as np

from . import __version__, core, gibbs, instances, learn, mmw, oracle, orsim
from .errors import ContractViolation, LearnerFailure, NumericFailure, ResourceError, UsageError

EXIT_OK, EXIT_USAGE, EXIT_CONTRACT, EXIT_RESOURCE = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _base_report(args, command):
    return {
        "command": command,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "rng": core.Rng.algorithm,
        "threads": os.environ.get("MMWQSDP_THREADS"),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }


def _need_seed(args):
    if args.seed is None:
        raise UsageError(f"{args.command} is stochastic and requires --seed")
    return core.Rng(args.seed)


def _need_in(args):
    if not args.inp:
        raise UsageError(f"{args.command} requires --in")
    return instances.read(args.inp)


def _finite(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


# -- subcommands ---------------------------------------------------------------------

def cmd_solve(args):
    inst = instances.to_sdp(_need_in(args))
    rng = _need_seed(args)
    kw = {"shots": args.shots, "delta_fail": args.delta_fail}
    orc = oracle.make_oracle(args.backend or "exact", inst, **kw)
    res = mmw.solve_feasibility(inst, orc, rng, delta=args.override_delta)
    rep = _base_report(args, "solve-feasibility")
    rep.update(res.to_report())
    rep.update(n=inst.dim, m=inst.m, epsilon=inst.epsilon)
    if res.witness is not None:
        rep["witness"] = instances.encode_matrix(res.witness)
    return rep


def _spec_and_estimator(args, rng):
    spec = instances.to_gibbs_spec(_need_in(args))
    eps = args.eps if args.eps is not None else 0.1
    delta = args.override_delta if args.override_delta is not None else eps / 8
    est = gibbs.ConsistentEstimator.draw(delta, rng)
    return spec, eps, est


def cmd_partition(args):
    rng = _need_seed(args)
    spec, eps, est = _spec_and_estimator(args, rng)
    model = gibbs.GibbsModel.of(spec, est)
    lam_min = gibbs.estimate_lambda_min(spec, est, 0.01, rng) if model.total_trace > 0 else math.inf
    z = gibbs.estimate_z_supp(spec, est, eps, rng, lam_min=lam_min)
    kd = gibbs.estimate_kernel_dim(spec, est, eps, rng)
    rep = _base_report(args, "estimate-partition")
    zd = z.to_dict()
    zd["lambda_min"] = _finite(zd.get("lambda_min"))
    rep.update(eps=eps, delta=est.delta, shift=est.shift, z_supp=zd, kernel_dim=kd.to_dict(),
               z_estimate=z.value + kd.value,
               exact={"z_supp_rounded": model.rounded_z_supp(), "kernel_dim": model.kernel_count()})
    return rep


def cmd_sample_gibbs(args):
    rng = _need_seed(args)
    spec = instances.to_gibbs_spec(_need_in(args))
    eps = args.eps if args.eps is not None else 0.2
    rho, diag = gibbs.prepare_gibbs(spec, eps, rng, safety_halving=args.safety_halving, delta=args.override_delta)
    K, _ = gibbs.assemble_k(spec)
    diag["lambda_min"] = _finite(diag["lambda_min"])
    rep = _base_report(args, "sample-gibbs")
    rep.update(eps=eps, diagnostics=diag, trace_distance_to_exact=core.trace_distance(rho, core.gibbs_of(K)),
               state=instances.encode_matrix(rho))
    return rep


def cmd_learn(args):
    doc = _need_in(args)
    meas = instances.to_measurement_set(doc)
    if args.target:
        tdoc = instances.read(args.target)
        target = instances.to_state(tdoc, "matrix" if tdoc["kind"] == "state" else "target")
    elif "target" in doc:
        target = instances.to_state(doc, "target")
    else:
        raise UsageError("learn-state needs --target or a measurement-set file with a 'target' field")
    eps = args.eps if args.eps is not None else 0.2
    backend = args.backend or "exact"
    rng = _need_seed(args) if backend == "sampled" else (core.Rng(args.seed) if args.seed is not None else None)
    desc, sigma, rounds, counters = learn.learn_state(meas, target, eps, backend=backend, rng=rng, shots=args.shots)
    rep = _base_report(args, "learn-state")
    rep.update(eps=eps, backend=backend, rounds=rounds, round_cap=mmw.round_cap(meas.dim, eps),
               counters=counters, description=desc.to_dict(), nonzero_terms=desc.nonzero,
               max_deviation=learn.verify_shadow(sigma, target, meas))
    return rep


def cmd_or_demo(args):
    rng = _need_seed(args)
    if args.inp:
        inst = instances.to_or_instance(instances.read(args.inp))
    else:
        m = args.m or 8
        k = args.k if args.k is not None else 0
        inst = instances.to_or_instance(instances.grover_or(m, k))
    trials = args.trials or 2000
    sim = orsim.OrSimulator(inst)
    accepts = sim.test_batch(trials, rng)
    verdict = orsim.gap_verdict(inst, trials, rng, simulator=sim)
    traces = inst.acceptance_traces()
    rep = _base_report(args, "or-demo")
    rep.update(d=inst.d, m=inst.m, eps=inst.eps, phi=inst.phi, xi=inst.xi, trials=trials,
               ancilla_dim=sim.spec.ancilla_dim, phase_bits=sim.bits,
               max_projector_trace=float(traces.max()), mean_projector_trace=float(traces.mean()),
               case1_bound=inst.case1_bound, case2_bound=inst.case2_bound,
               exact_accept_probability=sim.accept_probability(), empirical_accept_rate=accepts / trials,
               verdict=verdict.case, verdict_rate=verdict.rate, verdict_threshold=verdict.threshold)
    rows = [("d x ancilla", f"{inst.d} x {sim.spec.ancilla_dim}"), ("max Tr[L rho]", f"{traces.max():.4f}"),
            ("case-1 bound", f"{inst.case1_bound:.4f}"), ("case-2 bound", f"{inst.case2_bound:.4f}"),
            ("exact accept", f"{sim.accept_probability():.4f}"), ("empirical accept", f"{accepts / trials:.4f}"),
            ("verdict", verdict.case)]
    print("\n".join(f"{k:<18}{v}" for k, v in rows), file=sys.stderr)
    return rep


def cmd_gen(args):
    if not args.kind:
        raise UsageError("gen-instance requires --kind")
    seed = args.seed if args.seed is not None else 0
    params = {"n": args.n, "m": args.m, "k": args.k, "margin": args.margin, "eps": args.eps}
    allowed = {
        "lower-bound": ("n", "m", "eps"), "planted-feasible": ("n", "m", "eps", "margin"),
        "grover-or": ("m", "k", "eps"), "low-rank-gibbs": ("n",), "rank1-measurements": ("n", "m"),
        "random-state": ("n",),
    }
    if args.kind not in allowed:
        raise UsageError(f"unknown instance kind {args.kind!r}; choose from {', '.join(instances.GENERATORS)}")
    extra = [k for k, v in params.items() if v is not None and k not in allowed[args.kind]]
    if extra:
        raise UsageError(f"{args.kind} does not take --{', --'.join(extra)}")
    return instances.generate(args.kind, seed, **{k: params[k] for k in allowed[args.kind]})


def cmd_selftest(args):
    rng = core.Rng(args.seed if args.seed is not None else 0)
    checks = {}
    inst = instances.to_sdp(instances.lower_bound(4, 3, 7))
    checks["lower-bound infeasible"] = not mmw.solve_feasibility(inst, oracle.ExactOracle(inst), rng).feasible
    inst = instances.to_sdp(instances.planted_feasible(6, 6, 1))
    res = mmw.solve_feasibility(inst, oracle.ExactOracle(inst), rng)
    checks["planted feasible"] = res.feasible and res.exact_max_violation <= inst.epsilon
    g = orsim.grover_instance(8, 3)
    checks["grover case-1"] = orsim.gap_verdict(g, 200, rng).case == "case-1"
    checks["jordan structure"] = orsim.jordan_defect(g) < 1e-8
    spec = gibbs.GibbsSpec.from_parts(np.diag([1.0, 0, 0, 0]), np.diag([0, 1.0, 0, 0]))
    rho, _ = gibbs.prepare_gibbs(spec, 0.2, rng)
    checks["gibbs preparation"] = core.trace_distance(rho, core.gibbs_of(np.diag([1.0, -1.0, 0, 0]))) <= 0.2
    mdoc = instances.rank1_measurements(8, 16, 3)
    meas, target = instances.to_measurement_set(mdoc), instances.to_state(mdoc, "target")
    _, sigma, _, _ = learn.learn_state(meas, target, 0.2)
    checks["shadow tomography"] = learn.verify_shadow(sigma, target, meas) <= 0.2
    rep = _base_report(args, "selftest")
    rep.update(checks=checks, passed=all(checks.values()))
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}", file=sys.stderr)
    return rep


COMMANDS = {
    "solve-feasibility": cmd_solve,
    "estimate-partition": cmd_partition,
    "sample-gibbs": cmd_sample_gibbs,
    "learn-state": cmd_learn,
    "or-demo": cmd_or_demo,
    "gen-instance": cmd_gen,
    "selftest": cmd_selftest,
}


def build_parser():
    p = _Parser(prog="mmwqsdp", description="Matrix multiplicative weights SDP feasibility and Gibbs-state tools.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--in", dest="inp", help="input instance file")
        s.add_argument("--out", help="report path (stdout when omitted)")
        s.add_argument("--seed", type=int)
        s.add_argument("--eps", type=float)
        s.add_argument("--backend")
        s.add_argument("--delta-fail", type=float)
        s.add_argument("--shots", type=int)
        s.add_argument("--trials", type=int)
        s.add_argument("--override-delta", type=float)
        s.add_argument("--safety-halving", action="store_true")
        s.add_argument("--target", help="target state file (learn-state)")
        s.add_argument("--kind", help="fixture name (gen-instance)")
        s.add_argument("--n", type=int)
        s.add_argument("--m", type=int)
        s.add_argument("--k", type=int)
        s.add_argument("--margin", type=float)
    return p


def run(argv=None):
    """Parse ``argv``, dispatch, write the report; returns the exit code."""
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError(f"a subcommand is required: {', '.join(COMMANDS)}")
        report = COMMANDS[args.command](args)
        text = instances.dumps(report)
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        if args.command == "selftest" and not report["passed"]:
            return EXIT_CONTRACT
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ContractViolation, NumericFailure) as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (ResourceError, LearnerFailure) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


def main():
    sys.exit(run())
