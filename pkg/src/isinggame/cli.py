"""Command-line entry point: ``isinggame <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from isinggame import fictitious, harness, mnist, regret
from isinggame.exact import OracleInfeasible, exact
from isinggame.model import IsingModel, ModelClass, ModelError, generate_model

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INFEASIBLE = 0, 1, 2, 3

HISTORY_ALGOS = ("nr", "mw_er", "mw_er_cf", "mw_sr", "mw_sr_cf", "fp_ce", "fp_msne")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_marginals(path, p, comments=()):
    lines = [f"# {c}" for c in comments] + ["node,p_plus"]
    lines += [f"{i},{v!r}" for i, v in enumerate(np.asarray(p, dtype=float).tolist())]
    text = "\n".join(lines) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_generate(args) -> int:
    model = generate_model(args.d, ModelClass(args.model_class, args.w, args.q), args.seed)
    model.save(args.out)
    print(f"wrote {args.out}: n={model.n} edges={model.num_edges}")
    return EXIT_OK


def cmd_exact(args) -> int:
    model = IsingModel.load(args.model)
    res = exact(model, args.method)
    _write_marginals(args.out, res.marginals, [f"log_Z={res.log_Z!r}"])
    print(f"log_Z={res.log_Z!r}", file=sys.stderr if args.out in (None, "-") else sys.stdout)
    return EXIT_OK


def _infer_params(args) -> dict:
    p = {}
    if args.algo in ("mf", "bp", "trw"):
        if args.max_iters is not None:
            p["max_iters"] = args.max_iters
        if args.tol is not None:
            p["tol"] = args.tol
    elif args.max_iters is not None and args.algo not in ("bl", "fp_ce", "fp_msne"):
        p["iters"] = args.max_iters
    if args.damping is not None and args.algo in ("bp", "trw", "nr"):
        p["damping"] = args.damping
    if args.rho is not None and args.algo == "trw":
        p["rho"] = args.rho
    if args.eta is not None and args.algo.startswith("mw_"):
        p["eta"] = args.eta
    if args.burn_in is not None and args.algo == "gs":
        p["burn_in"] = args.burn_in
    if args.m is not None and args.algo.startswith("fp_"):
        p["m"] = args.m
    return p


def cmd_infer(args) -> int:
    model = IsingModel.load(args.model)
    params = {**harness.DEFAULT_PARAMS[args.algo], **_infer_params(args)}
    if args.algo.startswith("fp_"):
        marg, state = fictitious.fp_run(model, int(params["m"]), args.algo[3:], args.seed)
        hist = state.history
        if args.log_history:
            with open(args.log_history, "w") as fh:
                state.write_log(fh)
    elif args.algo in HISTORY_ALGOS:
        keep = model.n <= regret.JOINT_MAX_NODES
        if args.algo == "nr":
            hist, marg = regret.regret_matching_run(model, int(params["iters"]), args.seed,
                                                    float(params["damping"]), float(params["mu"]), keep_joint=keep)
        else:
            base = regret.MWU_VARIANTS[args.algo]
            cfg = regret.MwuConfig(base.regret_kind, base.step_kind, float(params.get("eta", base.eta)),
                                   int(params["iters"]))
            hist, marg = regret.mwu_run(model, cfg, args.seed, keep_joint=keep)
    else:
        marg, hist = harness.run_algorithm(args.algo, model, params, args.seed), None
    if args.save_history:
        if hist is None:
            raise harness.ConfigError(f"{args.algo} produces no play history")
        hist.save(args.save_history)
    notes = [f"algo={args.algo}", f"seed={args.seed}", f"converged={str(marg.converged).lower()}",
             f"iterations={marg.iterations_used}"]
    _write_marginals(args.out, marg.p, notes)
    return EXIT_OK


def cmd_certify(args) -> int:
    model = IsingModel.load(args.model)
    hist = regret.PlayHistory.load(args.history)
    if hist.n != model.n:
        raise ModelError("history and model disagree on the number of nodes")
    rep = regret.empirical_regret(model, hist)
    lines = [
        f"rounds {hist.rounds}",
        f"epsilon_cce {rep.epsilon_cce!r}",
        f"epsilon_ce {rep.epsilon_ce!r}",
        f"epsilon_cce_normalized {rep.epsilon_cce_norm!r}",
        f"epsilon_ce_normalized {rep.epsilon_ce_norm!r}",
    ]
    if hist.joint_counts is not None:
        lines.append(f"logZ_lower_bound {regret.logZ_lower_bound(model, hist)!r}")
        if model.n <= 12:
            cert = regret.ce_variational_certificate(model, hist.empirical_distribution())
            lines += [f"certificate_epsilon_ce {cert.epsilon_ce!r}",
                      f"cross_entropy_slack {cert.cross_entropy_slack!r}",
                      f"kl_slack {cert.kl_slack!r}"]
    try:
        lines.append(f"logZ_exact {exact(model).log_Z!r}")
    except OracleInfeasible:
        pass
    text = "\n".join(lines) + "\n"
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = harness.ExperimentConfig.load(args.config)
    out = args.out or cfg.output
    if out is None:
        raise harness.ConfigError("no output path in config or on the command line")
    recs = harness.run_experiment(cfg, out, jobs=args.jobs, progress=True)
    print(f"{len(recs)} rows in {out}")
    return EXIT_OK


def cmd_mnist_build(args) -> int:
    root = mnist.data_dir(args.data_dir)
    if root is None:
        raise FileNotFoundError(f"pass --data-dir or set {mnist.DATA_ENV}")
    train = mnist.load_split(root, "train", args.digit)
    test = mnist.load_split(root, "test", args.digit)
    weights, biases = mnist.learn_params(mnist.binarize(train.pixels, args.threshold), args.weight_scale)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    picks = rng.choice(test.count, size=min(args.count, test.count), replace=False)
    for k, idx in enumerate(picks):
        clean = mnist.binarize(test.pixels[idx], args.threshold)
        noisy = mnist.add_noise(clean, args.noise, args.seed + k)
        meta = {"class": "mnist", "test_index": int(idx), "noise": args.noise}
        mnist.observation_model(weights, biases, noisy, args.noise, meta).save(out / f"image_{k:04d}.txt")
    print(f"wrote {len(picks)} models to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    text = harness.summarize(harness.read_csv(args.csv), alpha=args.alpha)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="isinggame", description="Approximate Ising marginals via game dynamics and classic baselines.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="sample a random grid model")
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--class", dest="model_class", choices=("mixed", "attractive", "signprob"), default="mixed")
    g.add_argument("--w", type=float, required=True)
    g.add_argument("--q", type=float)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("exact", help="exact marginals and log partition function")
    e.add_argument("--model", required=True)
    e.add_argument("--method", choices=("auto", "brute", "transfer"), default="auto")
    e.add_argument("--out")
    e.set_defaults(func=cmd_exact)

    i = sub.add_parser("infer", help="run one approximate inference algorithm")
    i.add_argument("--model", required=True)
    i.add_argument("--algo", required=True, choices=harness.ALGORITHMS)
    i.add_argument("--max-iters", type=int, help="iteration cap, sweeps (gs) or rounds (nr, mw_*)")
    i.add_argument("--tol", type=float)
    i.add_argument("--damping", type=float)
    i.add_argument("--rho", type=float)
    i.add_argument("--eta", type=float)
    i.add_argument("--burn-in", type=float)
    i.add_argument("--m", type=int)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out")
    i.add_argument("--log-history", help="fp only: write the (x, T, s) trace as text")
    i.add_argument("--save-history", help="nr, mw_*, fp_*: save play counts for certify")
    i.set_defaults(func=cmd_infer)

    c = sub.add_parser("certify", help="regret and equilibrium report for a saved play history")
    c.add_argument("--model", required=True)
    c.add_argument("--history", required=True)
    c.add_argument("--out")
    c.set_defaults(func=cmd_certify)

    x = sub.add_parser("experiment", help="run an experiment config and write its CSV")
    x.add_argument("--config", required=True)
    x.add_argument("--out")
    x.add_argument("--jobs", type=int)
    x.set_defaults(func=cmd_experiment)

    mb = sub.add_parser("mnist-build", help="write de-noising models built from MNIST test images")
    mb.add_argument("--data-dir", help=f"defaults to ${mnist.DATA_ENV}")
    mb.add_argument("--digit", type=int)
    mb.add_argument("--count", type=int, default=20)
    mb.add_argument("--noise", type=float, default=0.05)
    mb.add_argument("--weight-scale", type=float, default=2.0)
    mb.add_argument("--threshold", type=float, default=0.5)
    mb.add_argument("--seed", type=int, default=0)
    mb.add_argument("--out-dir", required=True)
    mb.set_defaults(func=cmd_mnist_build)

    r = sub.add_parser("report", help="summary tables from a results CSV")
    r.add_argument("--csv", required=True)
    r.add_argument("--alpha", type=float, default=0.05)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except OracleInfeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except harness.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, mnist.IdxError, regret.HistoryError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
