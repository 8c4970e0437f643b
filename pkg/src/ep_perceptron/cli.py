"""Command-line entry points: gen, train, eval, exp, oracle-check.

Exit codes: 0 success, 1 usage error (bad flags, malformed config, missing
files), 2 numerical failure (factorisation breakdown, degenerate partition,
failed oracle suite).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checks import SUITES
from .core import EPConfig, EPResult, ep_run
from .datagen import (HammingBudgetError, PatternEnsemble, ProblemInstance, make_instance,
                      recurrent_instances)
from .finite_temp import FiniteTempConfig, ft_run
from .free_energy import HyperLearner, ep_run_learning
from .harness import PRESETS, ConfigError, ExperimentConfig, config_from_fields, \
    parse_config_text, run_experiment
from .metrics import (normalized_mse_db, p_nonzero, roc_and_auc, sensitivity_curve,
                      write_roc_csv, write_sensitivity_csv)
from .priors import PriorSet, SpikeSlab, ThetaMixture

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _load_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} file {path} is not valid JSON: {exc}") from None


def cmd_gen(args) -> int:
    rng = np.random.default_rng(args.seed)
    m = args.m if args.m is not None else max(1, int(round(args.alpha * args.n)))
    if args.ensemble == "recurrent":
        if not 0 <= args.unit < args.n:
            raise UsageError(f"--unit must lie in [0, {args.n})")
        inst = recurrent_instances(args.n, m, args.rho, rng, args.update, args.dh,
                                   units=[args.unit], slab_std=args.slab_std, eta=args.eta)[0]
    else:
        inst = make_instance(args.n, m, args.rho, rng, PatternEnsemble(args.ensemble, args.u),
                             args.slab_std, args.eta, {"seed": args.seed})
    inst.save(args.out)
    print(f"wrote {args.out}: N={inst.n} M={inst.m}")
    return EXIT_OK


def _student_priors(args, inst: ProblemInstance) -> PriorSet:
    meta = inst.meta
    rho = args.rho0 if args.learn_rho and args.rho0 is not None else args.rho
    if rho is None:
        rho = meta.get("rho", 0.25)
    lam = args.lam if args.lam is not None else 1.0 / meta.get("slab_std", 1.0) ** 2
    eta = args.eta0 if args.learn_eta and args.eta0 is not None else args.eta
    if eta is None:
        eta = meta.get("eta", 1.0)
    if args.learn_eta:
        eta = min(eta, 1 - 1e-6)
    weight = SpikeSlab(rho, lam)
    return PriorSet(weight, ThetaMixture(eta)) if (eta < 1 or args.learn_eta) else PriorSet(weight)


def cmd_train(args) -> int:
    inst = ProblemInstance.from_dict(_load_json(args.instance, "instance"))
    priors = _student_priors(args, inst)
    cfg = EPConfig(damping=args.damping, eps_stop=args.eps_stop, max_iter=args.max_iter)
    x = inst.design
    if args.engine == "finite":
        if args.learn_rho or args.learn_eta:
            hook = HyperLearner(x, args.learn_rho, args.learn_eta, args.lr_rho, args.lr_eta,
                                tol=cfg.eps_stop)
        else:
            hook = None
        res = ft_run(x, priors, FiniteTempConfig(args.beta, cfg), hook=hook)
    elif args.learn_rho or args.learn_eta:
        res = ep_run_learning(x, priors, cfg, args.learn_rho, args.learn_eta, args.lr_rho,
                              args.lr_eta, record_every=args.record_every)
    else:
        res = ep_run(x, priors, cfg)
    _dump(res.to_dict(), args.out)
    print(f"converged={res.converged} iterations={res.iterations} eps={res.eps_final:.3e} "
          f"rho={res.priors.weight.rho:.4f} eta={res.priors.eta:.4f}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    inst = ProblemInstance.from_dict(_load_json(args.instance, "instance"))
    res = EPResult.from_dict(_load_json(args.result, "result"))
    if res.n != inst.n:
        raise UsageError(f"result has N={res.n} but instance has N={inst.n}")
    w = res.weights
    truth = inst.teacher != 0
    out = {"converged": res.converged, "iterations": res.iterations,
           "mse_db": normalized_mse_db(w, inst.teacher) if np.any(w) else None,
           "rho": res.priors.weight.rho, "eta": res.priors.eta}
    if truth.any() and not truth.all():
        pw = res.priors.weight
        scores = {"abs_weight": np.abs(w),
                  "p_nonzero": p_nonzero(res.cav_mean[: res.n], res.cav_var[: res.n], pw.rho,
                                         pw.lam)}
        for name, s in scores.items():
            out[f"auc_{name}"] = roc_and_auc(s, truth).auc
        chosen = scores[args.score]
        meta = {"instance": str(args.instance), "result": str(args.result), "score": args.score}
        if args.roc_csv:
            write_roc_csv(args.roc_csv, roc_and_auc(chosen, truth), meta)
        if args.sensitivity_csv:
            write_sensitivity_csv(args.sensitivity_csv, sensitivity_curve(chosen, truth), meta)
    _dump(out, args.out)
    return EXIT_OK


def cmd_exp(args) -> int:
    fields = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        fields = parse_config_text(text)
    if args.preset:
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        fields.setdefault("preset", args.preset)
    if args.seed is not None:
        fields["root_seed"] = args.seed
    if args.trials is not None:
        fields["n_trials"] = args.trials
    if args.alphas:
        fields["alphas"] = tuple(args.alphas)
    for key in ("damping", "eps_stop", "max_iter"):
        if getattr(args, key) is not None:
            fields[key] = getattr(args, key)
    cfg: ExperimentConfig = config_from_fields(fields)
    out = args.out or cfg.out_dir
    if not out:
        raise UsageError("give --out or set out_dir in the config")

    def progress(rec):
        if args.verbose:
            print(f"alpha={rec['alpha']} trial={rec['trial']} converged={rec['converged']} "
                  f"mse_db={rec['mse_db']}", file=sys.stderr)

    result = run_experiment(cfg, workers=args.workers, out_dir=out, progress=progress)
    for entry in result.summary["per_alpha"]:
        conv = entry["converged"]
        print(f"alpha={entry['alpha']:g} converged={entry['n_converged']}/{entry['n_trials']} "
              f"mse_db={_fmt(conv['mse_db'])} auc_abs={_fmt(conv['auc_abs'])} "
              f"rho_L={_fmt(conv['rho_learned'])}")
    print(f"records in {Path(out) / 'records.csv'}")
    return EXIT_OK


def _fmt(block):
    if block["mean"] is None:
        return "-"
    return f"{block['mean']:.4g}+-{block['se']:.2g}"


def cmd_oracle_check(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        fn = SUITES[name]
        res = fn(seed=args.seed) if name != "moments" else fn()
        print(res.line())
        ok &= res.passed
    if not ok:
        raise NumericalFailure("one or more oracle suites failed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ep-perceptron", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a teacher-student instance file")
    g.add_argument("--n", type=int, default=128)
    size = g.add_mutually_exclusive_group()
    size.add_argument("--alpha", type=float, default=2.0)
    size.add_argument("--m", type=int)
    g.add_argument("--rho", type=float, default=0.25)
    g.add_argument("--slab-std", type=float, default=1.0)
    g.add_argument("--eta", type=float, default=1.0, help="fraction of labels kept")
    g.add_argument("--ensemble", choices=["iid", "mvn", "recurrent"], default="iid")
    g.add_argument("--u", type=int, default=1, help="rank parameter of the mvn covariance")
    g.add_argument("--update", choices=["sync", "sweep", "hamming"], default="sync")
    g.add_argument("--dh", type=int, default=10, help="Hamming distance between stored states")
    g.add_argument("--unit", type=int, default=0, help="trained unit of the recurrent network")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="run EP on an instance file")
    t.add_argument("--instance", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--rho", type=float, help="student density (default: instance value)")
    t.add_argument("--lam", type=float, help="slab precision (default: 1 / slab_std^2)")
    t.add_argument("--eta", type=float, help="label reliability (default: instance value)")
    t.add_argument("--learn-rho", action="store_true")
    t.add_argument("--learn-eta", action="store_true")
    t.add_argument("--rho0", type=float, help="initial density when learning it")
    t.add_argument("--eta0", type=float, help="initial eta when learning it")
    t.add_argument("--lr-rho", type=float, default=1e-5)
    t.add_argument("--lr-eta", type=float, default=1e-5)
    t.add_argument("--record-every", type=int, default=10)
    t.add_argument("--damping", type=float, default=0.99)
    t.add_argument("--eps-stop", type=float, default=1e-4)
    t.add_argument("--max-iter", type=int, default=50000)
    t.add_argument("--engine", choices=["zero", "finite"], default="zero")
    t.add_argument("--beta", type=float, default=1e4, help="inverse temperature (finite engine)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="metrics of a result against its instance")
    e.add_argument("--instance", required=True)
    e.add_argument("--result", required=True)
    e.add_argument("--score", choices=["abs_weight", "p_nonzero"], default="abs_weight")
    e.add_argument("--roc-csv")
    e.add_argument("--sensitivity-csv")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("exp", help="run a seeded experiment grid")
    x.add_argument("--config")
    x.add_argument("--preset", help=f"one of {', '.join(sorted(PRESETS))}")
    x.add_argument("--seed", type=int)
    x.add_argument("--trials", type=int)
    x.add_argument("--alphas", type=float, nargs="+")
    x.add_argument("--damping", type=float, help="override the preset / config damping")
    x.add_argument("--eps-stop", type=float)
    x.add_argument("--max-iter", type=int)
    x.add_argument("--workers", type=int, help="worker processes (default: "
                   "$EP_PERCEPTRON_WORKERS or 1)")
    x.add_argument("--out")
    x.add_argument("--verbose", action="store_true")
    x.set_defaults(func=cmd_exp)

    o = sub.add_parser("oracle-check", help="run the oracle suites")
    o.add_argument("--suite", choices=["all", *SUITES], default="all")
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING))
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, HammingBudgetError, ArithmeticError,
            np.linalg.LinAlgError) as exc:
        # LinAlgError derives from ValueError, so it must be caught first
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
