"""Command-line front end.

Each subcommand writes ``report.json`` (plus CSV files where relevant) into
``--out``; wall time goes to ``timing.json`` so reports stay reproducible.
Exit codes: 0 success, 2 usage, 3 configuration, 4 data, 5 verification.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from contextlib import nullcontext
from importlib import resources
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .attacks import AttackConfig
from .dataio import gen_binary, gen_moons, load_idx, read_csv, split
from .dcdiv import DEFAULT_R_LADDER, dc_primal, dc_scan_r
from .demo import DemoSettings, run_demo
from .dro import DroProblem, bruteforce_primal, solve_outer
from .errors import ArmorError, DataFormatError
from .fdiv import Alpha, DivergenceSpec, Indicator, KL
from .innermax import InnerConfig
from .nnet import load_params, save_params
from .suites import SUITES, run_suites
from .trainer import TrainConfig, evaluate, train
from .transport import LabelCostSpec, SampleCostSpec

EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_VERIFY = 2, 3, 4, 5


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def _version():
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path: Path, data):
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def _load_config(path):
    if path is None:
        return None
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def _bundled(name):
    return json.loads(resources.files("armor").joinpath("fixtures", name).read_text())


def _inf_matrix(rows):
    return np.array([[math.inf if x is None or x == "inf" else float(x) for x in r] for r in rows])


def _require(cfg, *keys):
    missing = [k for k in keys if k not in cfg]
    if missing:
        raise ConfigError(f"config is missing {', '.join(missing)}")


# ----------------------------------------------------------------- subcommands

def cmd_divergence(args, cfg):
    cfg = cfg if cfg is not None else _bundled("equal_marginals.json")
    _require(cfg, "divergence", "cost", "P", "Q")
    try:
        D = DivergenceSpec.from_dict(cfg["divergence"])
        res = dc_primal(D, _inf_matrix(cfg["cost"]), np.asarray(cfg["P"], float),
                        np.asarray(cfg["Q"], float))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    print(f"D^c = {res.value:.12g} (gap {res.gap_estimate:.2e}, converged {res.converged})")
    results = {"value": res.value, "eta_star": res.eta_star, "plan": res.plan,
               "iterations": res.iterations, "gap_estimate": res.gap_estimate,
               "converged": res.converged}
    return cfg, results, 0


def cmd_dro_solve(args, cfg):
    cfg = cfg if cfg is not None else _bundled("single_sample_kl.json")
    try:
        prob = DroProblem.from_dict(cfg)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad DRO problem: {exc}") from exc
    sol = solve_outer(prob)
    results = {"dual": sol.to_dict()}
    print(f"value = {sol.value:.12g} at lambda* = {sol.lambda_star:.6g}"
          + (f" (boundary: {sol.boundary})" if sol.boundary else ""))
    code = 0
    if args.certify:
        if prob.loss.size > 3:
            raise ConfigError("--certify supports at most 3 candidate points")
        primal = bruteforce_primal(prob, grid_step=args.grid_step)
        gap = abs(sol.value - primal.value)
        ok = gap <= args.tolerance
        results["certificate"] = {"primal": primal.value, "lower": primal.lower,
                                  "upper": primal.upper, "gap": gap,
                                  "tolerance": args.tolerance, "passed": ok}
        print(f"primal = {primal.value:.12g}  |gap| = {gap:.3e}  {'OK' if ok else 'FAILED'}")
        code = 0 if ok else EXIT_VERIFY
    return cfg, results, code


def cmd_verify(args, cfg):
    checks, timing = run_suites(args.suite, seed=args.seed)
    failed = [c for c in checks if not c["passed"]]
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['suite']}/{c['name']}")
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    results = {"suite": args.suite, "checks": checks, "failed": [f"{c['suite']}/{c['name']}" for c in failed]}
    return {"suite": args.suite}, results, (EXIT_VERIFY if failed else 0), {"suites": timing}


TRAIN_KEYS = {
    "data", "method", "divergence", "alpha", "beta", "epsilon", "L", "q", "norm", "K", "delta",
    "adv_labels", "M", "lr_x", "lr_y", "lr_lambda", "lr_theta", "t", "s", "robust_class",
    "epochs", "batch", "hidden", "binary_mode", "lambda_init", "attack", "seed",
}


def _dataset(spec, seed):
    """``(train, test)`` from a data block of the config."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("data must be an object with a 'kind'")
    kind = spec["kind"]
    try:
        if kind == "moons":
            ds = gen_moons(int(spec.get("n", 1000)), float(spec.get("noise", 0.1)), seed=seed)
            return split(ds, int(spec.get("n_train", len(ds) * 3 // 5)))
        if kind == "binary":
            ds = gen_binary(int(spec.get("n", 512)), int(spec.get("d", 16)),
                            spec.get("rule", ((0, 1), (2, 3))), seed=seed,
                            noise=float(spec.get("noise", 0.0)))
            return split(ds, int(spec.get("n_train", len(ds) * 3 // 5)))
        if kind == "idx":
            ds = load_idx(spec["images"], spec["labels"], spec.get("limit"))
            return split(ds, int(spec.get("n_train", len(ds) * 2 // 3)))
        if kind == "csv":
            domain = spec.get("domain", "box_continuous")
            nc = spec.get("num_classes")
            tr = read_csv(spec["train"], domain=domain, num_classes=nc)
            te = read_csv(spec["test"], domain=domain, num_classes=tr.num_classes)
            return tr, te
    except (OSError, DataFormatError) as exc:
        raise DataError(str(exc)) from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad data block: {exc}") from exc
    raise ConfigError(f"unknown data kind {kind!r}")


def _divergence_from(cfg):
    name = cfg.get("divergence", "KL")
    if isinstance(name, dict):
        return DivergenceSpec.from_dict(name)
    key = str(name).lower()
    if key == "kl":
        return KL()
    if key == "alpha":
        return Alpha(float(cfg.get("alpha", 2.0)))
    if key == "indicator":
        return Indicator()
    raise ConfigError(f"unknown divergence {name!r}")


def build_train_config(cfg, seed, num_classes, domain):
    unknown = set(cfg) - TRAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        cost = SampleCostSpec(float(cfg.get("L", 1.0)), float(cfg.get("q", 2.0)),
                              cfg.get("norm", "l2"))
        adv_labels = bool(cfg.get("adv_labels", False))
        label_cost = None
        if adv_labels or "K" in cfg or "delta" in cfg:
            label_cost = LabelCostSpec(float(cfg.get("K", 1.0)), float(cfg.get("delta", 0.1)))
        inner = InnerConfig(M=int(cfg.get("M", 10)), lr_x=float(cfg.get("lr_x", 0.01)),
                            lr_y=float(cfg.get("lr_y", cfg.get("lr_x", 0.01))), domain=domain,
                            num_classes=num_classes, binary_mode=cfg.get("binary_mode", "greedy"))
        opt = lambda k: None if cfg.get(k) is None else float(cfg[k])  # noqa: E731
        return TrainConfig(
            method=cfg.get("method", "armor"),
            epochs=int(cfg.get("epochs", 10)),
            batch=int(cfg.get("batch", 32)),
            hidden=tuple(int(h) for h in cfg.get("hidden", (32, 32))),
            divergence=_divergence_from(cfg),
            epsilon=float(cfg.get("epsilon", 0.1)),
            cost=cost,
            label_cost=label_cost,
            adv_labels=adv_labels,
            inner=inner,
            lr_lambda=float(cfg.get("lr_lambda", 2e-3)),
            lr_theta=float(cfg.get("lr_theta", 0.1)),
            lambda_init=float(cfg.get("lambda_init", 1.0)),
            t=opt("t"),
            s=opt("s"),
            robust_class=int(cfg.get("robust_class", 1)),
            beta=opt("beta"),
            seed=seed,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _attack_from(spec, domain):
    if spec is None:
        return None
    try:
        kind = spec.get("kind", "rfgsm" if domain == "binary_monotone" else "pgd")
        return AttackConfig(kind, float(spec.get("eps_attack", 0.1)), int(spec.get("steps", 40)),
                            float(spec.get("step_size", 0.01)))
    except (AttributeError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad attack block: {exc}") from exc


def _metric_rows(params, test, attacks):
    rows = []
    for name, atk in attacks:
        m = evaluate(params, test, atk)
        rows.append((name, m.accuracy, m.fnr, m.fpr, m.n))
    return rows


METRIC_HEADER = ("attack", "accuracy", "fnr", "fpr", "n")


def cmd_train(args, cfg):
    if cfg is None:
        raise ConfigError("train needs --config")
    _require(cfg, "data")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    tr, te = _dataset(cfg["data"], seed)
    tcfg = build_train_config(cfg, seed, tr.num_classes, tr.domain)
    out = Path(args.out)
    params, log = train(tr, tcfg, log_path=out / "train_log.ndjson")
    save_params(params, out / "model.bin")
    attacks = [("none", None)]
    atk = _attack_from(cfg.get("attack"), tr.domain)
    if atk is not None:
        attacks.append((atk.kind, atk))
    rows = _metric_rows(params, te, attacks)
    _write_csv(out / "metrics.csv", METRIC_HEADER, rows)
    for r in rows:
        print(f"{r[0]:>6}: accuracy {r[1]:.4f}  fnr {r[2]:.4f}  fpr {r[3]:.4f}")
    last = log.records[-1] if log.records else {}
    results = {"metrics": [dict(zip(METRIC_HEADER, r)) for r in rows], "final_lambda": last.get("lambda"),
               "final_rho": last.get("rho"), "batches": len(log.records),
               "train_config": tcfg.to_dict()}
    return {**cfg, "seed": seed}, results, 0


def cmd_attack_eval(args, cfg):
    if cfg is None:
        raise ConfigError("attack-eval needs --config with a data block")
    _require(cfg, "data")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    _, te = _dataset(cfg["data"], seed)
    try:
        params = load_params(args.model)
    except OSError as exc:
        raise DataError(f"cannot read model {args.model}: {exc}") from exc
    except DataFormatError as exc:
        raise DataError(str(exc)) from exc
    try:
        atk = AttackConfig(args.attack, args.eps, args.steps, args.step_size)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = _metric_rows(params, te, [("none", None), (atk.kind, atk)])
    _write_csv(Path(args.out) / "metrics.csv", METRIC_HEADER, rows)
    for r in rows:
        print(f"{r[0]:>6}: accuracy {r[1]:.4f}  fnr {r[2]:.4f}  fpr {r[3]:.4f}")
    snapshot = {**cfg, "seed": seed, "attack": {"kind": atk.kind, "eps_attack": atk.eps_attack,
                                               "steps": atk.steps, "step_size": atk.step_size}}
    return snapshot, {"metrics": [dict(zip(METRIC_HEADER, r)) for r in rows]}, 0


def cmd_scan_r(args, cfg):
    cfg = cfg if cfg is not None else _bundled("equal_marginals.json")
    _require(cfg, "divergence", "cost", "P", "Q")
    try:
        D = DivergenceSpec.from_dict(cfg["divergence"])
        ladder = cfg.get("r_ladder", list(DEFAULT_R_LADDER))
        scan = dc_scan_r(D, _inf_matrix(cfg["cost"]), np.asarray(cfg["P"], float),
                         np.asarray(cfg["Q"], float), ladder)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    rows = [(r, v, v / r) for r, v in scan]
    _write_csv(Path(args.out) / "sweep.csv", ("r", "value", "value_over_r"), rows)
    for r, v, s in rows:
        print(f"r={r:<10g} D={v:.10g}  D/r={s:.10g}")
    return cfg, {"scan": [{"r": r, "value": v, "value_over_r": s} for r, v, s in rows]}, 0


def cmd_demo(args, cfg):
    seed = args.seed if args.seed is not None else 0
    settings = DemoSettings(seeds=(seed, seed + 1, seed + 2))
    rep = run_demo(settings, idx_dir=args.idx_dir)
    rows = [(r["seed"], r["source"], r["erm_clean"], r["erm_robust"], r["armor_clean"],
             r["armor_robust"], r["robust_ceiling"]) for r in rep["runs"]]
    _write_csv(Path(args.out) / "metrics.csv",
               ("seed", "source", "erm_clean", "erm_robust", "armor_clean", "armor_robust",
                "robust_ceiling"), rows)
    for r in rep["runs"]:
        print(f"seed {r['seed']}: ERM {r['erm_clean']:.4f}/{r['erm_robust']:.4f}  "
              f"ARMOR {r['armor_clean']:.4f}/{r['armor_robust']:.4f}  ceiling {r['robust_ceiling']:.4f}")
    ok = rep["gain_met"] and rep["clean_drop_met"]
    return {"seeds": list(settings.seeds), "idx_dir": args.idx_dir}, rep, (0 if ok else EXIT_VERIFY)


# ----------------------------------------------------------------- plumbing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, default=None, help="random seed (non-negative)")
    common.add_argument("--out", default=".", help="directory for report files")
    common.add_argument("--threads", type=int, default=None, help="cap on BLAS threads")

    parser = _Parser(prog="armor", description="Transport-regularized divergences and robust training")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("divergence", parents=[common], help="compute D^c(Q||P)")
    p = sub.add_parser("dro-solve", parents=[common], help="solve the finite DRO dual")
    p.add_argument("--certify", action="store_true", help="compare with the brute-force primal")
    p.add_argument("--grid-step", type=float, default=1e-2)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p = sub.add_parser("verify", parents=[common], help="run verification suites")
    p.add_argument("--suite", default="all", choices=["all", *SUITES])
    sub.add_parser("train", parents=[common], help="train a classifier")
    p = sub.add_parser("attack-eval", parents=[common], help="evaluate a checkpoint under attack")
    p.add_argument("--model", required=True)
    p.add_argument("--attack", default="pgd", choices=["fgsm", "pgd", "rfgsm"])
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--step-size", type=float, default=0.01)
    sub.add_parser("scan-r", parents=[common], help="D^{rc} along a ladder of r")
    p = sub.add_parser("demo", parents=[common], help="ERM versus ARMOR robustness demo")
    p.add_argument("--idx-dir", default=None, help="directory holding MNIST IDX files")
    return parser


COMMANDS = {
    "divergence": cmd_divergence,
    "dro-solve": cmd_dro_solve,
    "verify": cmd_verify,
    "train": cmd_train,
    "attack-eval": cmd_attack_eval,
    "scan-r": cmd_scan_r,
    "demo": cmd_demo,
}


def _thread_limit(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and args.seed < 0:
        print("armor: error: --seed must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    if args.threads is not None and args.threads < 1:
        print("armor: error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "verify" and args.seed is None:
        args.seed = 0
    start = time.perf_counter()
    try:
        os.makedirs(args.out, exist_ok=True)
        cfg = _load_config(args.config)
        with _thread_limit(args.threads):
            outcome = COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"armor: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DataFormatError) as exc:
        print(f"armor: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ArmorError as exc:
        print(f"armor: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    snapshot, results, code = outcome[:3]
    extra_timing = outcome[3] if len(outcome) > 3 else {}
    out = Path(args.out)
    report = {"command": args.command, "config": snapshot, "seed": args.seed,
              "version": _version(), "results": results, "exit_code": code}
    _write_json(out / "report.json", report)
    _write_json(out / "timing.json", {"wall_seconds": time.perf_counter() - start, **extra_timing})
    return code


if __name__ == "__main__":
    sys.exit(main())
