"""Command-line entry point: ``cfgan {testpower,null,gan,equiv,bench,replay}``.

Every command writes CSVs plus a ``manifest.json`` recording the fully
resolved configuration.  Passing that manifest back through ``--config``
(or ``cfgan replay``) reproduces the CSVs byte for byte, except for the
wall-clock timings of ``bench``.

Flag precedence: explicit flags > ``--config`` JSON > built-in defaults.
Exit codes: 0 success, 1 runtime abort, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, cfd, gantrain, nets, twosample
from .randdist import Rng, WeightingDistribution

log = logging.getLogger("cfgan")

DEFAULTS = {
    "common": {"seed": 0, "out_dir": None, "jobs": 1, "force": False},
    "testpower": {"dims": [1, 2, 4, 8, 16, 32], "n": 10000, "k": 3, "trials": 100, "alpha": 0.05,
                  "permutations": 200, "steps": 100, "batch_size": 1000, "lr": 0.05,
                  "mean_gap": 1.0, "family": "gaussian", "init_scale": 1.0,
                  "smoothing_scale": None,
                  "statistics": ["ecfd", "ecfd_smooth", "oecfd", "oecfd_smooth"]},
    "gan": {"model": "ocfgan_gp", "dataset": "d1", "iters": None, "family": None, "init_scale": 1.0,
            "k": 8, "n_critic": 5, "batch_size": 50, "lr": 1e-3, "clip": None, "lambda_gp": None,
            "lambda_fs": 16.0, "n_eval": 5000, "log_every": 100},
    "equiv": {"sigma": [0.5, 2.0], "dim": 2, "n": 64, "shift": 0.5, "k": 100, "reps": 1000,
              "tolerance": 3.0, "strict": False},
    "bench": {"ns": [1000, 10000, 100000], "k": 8, "m": 16, "repeats": 3,
              "estimators": ["ecfd", "mmd2"]},
}
DEFAULTS["null"] = {key: val for key, val in DEFAULTS["testpower"].items() if key != "mean_gap"}


class UsageError(Exception):
    pass


# ------------------------------------------------------------------- parsing

def _int_list(text):
    try:
        vals = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("list must not be empty")
    return vals


def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _str_list(text):
    return [v.strip().replace("-", "_") for v in str(text).split(",") if v.strip()]


def _name(text):
    return str(text).strip().lower().replace("-", "_")


def build_parser():
    parser = argparse.ArgumentParser(prog="cfgan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(p):
        p.add_argument("--seed", type=int, default=S)
        p.add_argument("--out-dir", dest="out_dir", default=S)
        p.add_argument("--jobs", type=int, default=S)
        p.add_argument("--config", default=None, help="JSON config or manifest file")
        p.add_argument("--force", action="store_true", default=S, help="overwrite an existing manifest")
        p.add_argument("-v", "--verbose", action="store_true", default=False)

    for name in ("testpower", "null"):
        p = sub.add_parser(name, help="power of ECFD tests vs dimension" if name == "testpower"
                           else "null-acceptance rate of ECFD tests vs dimension")
        common(p)
        p.add_argument("--dims", type=_int_list, default=S)
        p.add_argument("--n", type=int, default=S, help="samples per distribution")
        p.add_argument("--k", type=int, default=S, help="number of frequencies")
        p.add_argument("--trials", type=int, default=S)
        p.add_argument("--alpha", type=float, default=S)
        p.add_argument("--permutations", type=int, default=S)
        p.add_argument("--steps", type=int, default=S, help="Adam steps for optimized scales")
        p.add_argument("--batch-size", dest="batch_size", type=int, default=S)
        p.add_argument("--lr", type=float, default=S)
        p.add_argument("--family", type=_name, default=S)
        p.add_argument("--init-scale", dest="init_scale", type=float, default=S)
        p.add_argument("--smoothing-scale", dest="smoothing_scale", type=float, default=S)
        p.add_argument("--statistics", type=_str_list, default=S)
        if name == "testpower":
            p.add_argument("--mean-gap", dest="mean_gap", type=float, default=S)

    p = sub.add_parser("gan", help="train a generator on a synthetic 1-D dataset")
    common(p)
    p.add_argument("--model", type=_name, default=S)
    p.add_argument("--dataset", type=_name, default=S)
    p.add_argument("--iters", type=int, default=S)
    p.add_argument("--family", type=_name, default=S)
    p.add_argument("--init-scale", dest="init_scale", type=float, default=S)
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--n-critic", dest="n_critic", type=int, default=S)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--clip", type=float, default=S)
    p.add_argument("--lambda-gp", dest="lambda_gp", type=float, default=S)
    p.add_argument("--lambda-fs", dest="lambda_fs", type=float, default=S)
    p.add_argument("--n-eval", dest="n_eval", type=int, default=S)
    p.add_argument("--log-every", dest="log_every", type=int, default=S)

    p = sub.add_parser("equiv", help="Monte-Carlo CFD vs dual-kernel MMD check")
    common(p)
    p.add_argument("--sigma", type=_float_list, default=S, help="per-dimension scales")
    p.add_argument("--dim", type=int, default=S)
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--shift", type=float, default=S)
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--reps", type=int, default=S)
    p.add_argument("--tolerance", type=float, default=S, help="pass band in standard errors")
    p.add_argument("--strict", action="store_true", default=S, help="exit 1 if the check fails")

    p = sub.add_parser("bench", help="time ecfd against mmd2 over sample sizes")
    common(p)
    p.add_argument("--ns", type=_int_list, default=S)
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--m", type=int, default=S)
    p.add_argument("--repeats", type=int, default=S)
    p.add_argument("--estimators", type=_str_list, default=S)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--force", action="store_true", default=False)
    p.add_argument("-v", "--verbose", action="store_true", default=False)
    return parser


def _load_config(path):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"--config: cannot read {path}: {exc}")
    if isinstance(data, dict) and "command" in data and "config" in data:
        data = data["config"]
    if not isinstance(data, dict):
        raise UsageError("--config: expected a JSON object")
    return data


def resolve(command, explicit, config_path=None):
    """Merge defaults, config file and explicit flags; reject unknown keys."""
    merged = {**DEFAULTS["common"], **DEFAULTS[command]}
    if config_path:
        file_cfg = _load_config(config_path)
        unknown = sorted(set(file_cfg) - set(merged))
        if unknown:
            raise UsageError(f"--config: unknown keys for {command}: {', '.join(unknown)}")
        merged.update(file_cfg)
    merged.update(explicit)
    return merged


# ---------------------------------------------------------------- validation

def _validate(command, cfg):
    def need(cond, flag, msg):
        if not cond:
            raise UsageError(f"--{flag}: {msg}")

    need(cfg["jobs"] >= 1, "jobs", "must be >= 1")
    if command in ("testpower", "null"):
        need(0 < cfg["alpha"] < 1, "alpha", f"must lie in (0, 1), got {cfg['alpha']}")
        need(len(cfg["dims"]) > 0 and min(cfg["dims"]) >= 1, "dims", "dimensions must be >= 1")
        need(cfg["n"] >= 2, "n", "need at least 2 samples")
        need(cfg["k"] >= 1, "k", "must be >= 1")
        need(cfg["trials"] >= 0, "trials", "must be >= 0")
        need(cfg["permutations"] >= 1 / cfg["alpha"] - 1, "permutations",
             f"too few to reach alpha={cfg['alpha']}")
        bad = [s for s in cfg["statistics"] if s not in twosample.STATISTICS]
        need(not bad, "statistics", f"unknown {bad}; valid: {', '.join(twosample.STATISTICS)}")
        need(cfg["family"] in ("gaussian", "student_t", "laplace", "uniform"), "family",
             f"unknown family {cfg['family']!r}")
    elif command == "gan":
        need(cfg["model"] in gantrain.MODELS, "model",
             f"unknown model {cfg['model']!r}; valid: {', '.join(gantrain.MODELS)}")
        need(cfg["dataset"] in gantrain.DATASETS, "dataset",
             f"unknown dataset {cfg['dataset']!r}; valid: {', '.join(gantrain.DATASETS)}")
        need(cfg["iters"] is None or cfg["iters"] >= 0, "iters", "must be >= 0")
        need(cfg["log_every"] >= 1, "log-every", "must be >= 1")
    elif command == "equiv":
        need(len(cfg["sigma"]) in (1, cfg["dim"]), "sigma",
             f"expected 1 or {cfg['dim']} values, got {len(cfg['sigma'])}")
        need(min(cfg["sigma"]) > 0, "sigma", "scales must be positive")
        need(cfg["reps"] >= 1 and cfg["k"] >= 1, "reps", "reps and k must be >= 1")
    elif command == "bench":
        need(min(cfg["ns"]) >= 2, "ns", "sizes must be >= 2")
        bad = [e for e in cfg["estimators"] if e not in ("ecfd", "mmd2")]
        need(not bad, "estimators", f"unknown {bad}; valid: ecfd, mmd2")


# ------------------------------------------------------------------- outputs

def _write_csv(path, fields, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r[f]) for f in fields])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _prepare_out(command, cfg):
    out = Path(cfg["out_dir"] or f"runs/{command}")
    manifest = out / "manifest.json"
    if manifest.exists() and not cfg["force"]:
        raise UsageError(f"--out-dir: {manifest} exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out, command, cfg, outputs):
    stored = {k: v for k, v in cfg.items() if k not in ("out_dir", "force")}
    manifest = {"command": command, "config": stored, "seed": cfg["seed"],
                "version": __version__, "outputs": [str(p) for p in outputs]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ commands

def _test_config(cfg):
    return twosample.TestConfig(k=cfg["k"], alpha=cfg["alpha"], permutations=cfg["permutations"],
                                steps=cfg["steps"], batch_size=cfg["batch_size"], lr=cfg["lr"],
                                family=cfg["family"], init_scale=cfg["init_scale"],
                                smoothing_scale=cfg["smoothing_scale"], seed=cfg["seed"])


TRIAL_FIELDS = ("dim", "statistic", "trial", "reject", "stat_value", "p_value", "sigma_norm")


def cmd_testpower(cfg, out, null=False):
    rows = twosample.power_experiment(cfg["dims"], cfg["n"], cfg["trials"], _test_config(cfg),
                                      statistics=tuple(cfg["statistics"]),
                                      mean_gap=0.0 if null else cfg["mean_gap"], jobs=cfg["jobs"])
    trials = out / "trials.csv"
    summary = out / "summary.csv"
    value = "acceptance" if null else "power"
    _write_csv(trials, TRIAL_FIELDS, rows)
    summ = twosample.summarize(rows, value)
    _write_csv(summary, ("dim", "statistic", value, "stderr"), summ)
    for r in summ:
        print(f"dim={r['dim']:<5d} {r['statistic']:<13s} {value}={r[value]:.3f} (se {r['stderr']:.3f})")
    return [trials, summary]


def cmd_null(cfg, out):
    return cmd_testpower(cfg, out, null=True)


def cmd_gan(cfg, out):
    tc = gantrain.TrainConfig(model=cfg["model"], dataset=cfg["dataset"], family=cfg["family"],
                              init_scale=cfg["init_scale"], k=cfg["k"], n_critic=cfg["n_critic"],
                              batch_size=cfg["batch_size"], lr=cfg["lr"], iterations=cfg["iters"],
                              clip=cfg["clip"], lambda_gp=cfg["lambda_gp"], lambda_fs=cfg["lambda_fs"],
                              n_eval=cfg["n_eval"], log_every=cfg["log_every"], seed=cfg["seed"])
    resolved = tc.resolved()
    cfg.update({"iters": resolved.iterations, "family": resolved.family, "clip": resolved.clip,
                "lambda_gp": resolved.lambda_gp})
    state = gantrain.train(resolved, progress=lambda r: log.info(
        "iter %d mae %.4f sigma %.4f", r["iter"], r["mae"], r["sigma_norm"]))
    metrics = out / "metrics.csv"
    _write_csv(metrics, gantrain.METRIC_FIELDS, state.metrics)
    gen_path, critic_path = out / "generator.bin", out / "critic.bin"
    nets.save(state.generator, gen_path)
    nets.save(state.critic, critic_path)
    last = state.metrics[-1]
    print(f"{cfg['model']} on {cfg['dataset']}: iter {last['iter']} MAE {last['mae']:.4f}")
    return [metrics, gen_path, critic_path]


def cmd_equiv(cfg, out):
    dim = cfg["dim"]
    sigma = np.broadcast_to(np.asarray(cfg["sigma"], dtype=np.float64), (dim,)).copy()
    rng = Rng(cfg["seed"])
    X = rng.child(0).normal((cfg["n"], dim))
    Y = rng.child(1).normal((cfg["n"], dim))
    Y[:, 0] += cfg["shift"]
    dist = WeightingDistribution.create("gaussian", sigma)
    est, se = cfd.cfd_mc(X, Y, dist, rng.child(2), cfg["k"], cfg["reps"], return_stderr=True)
    oracle = cfd.mmd2(X, Y, cfd.KernelSpec.rbf(sigma), biased=True)
    z = abs(est - oracle) / se if se > 0 else float("inf")
    passed = z <= cfg["tolerance"]
    row = {"estimate": est, "oracle": oracle, "stderr": se, "z": z, "pass": passed}
    path = out / "equiv.csv"
    _write_csv(path, ("estimate", "oracle", "stderr", "z", "pass"), [row])
    print(f"cfd_mc   {est:.6f}\nmmd2     {oracle:.6f}\nstderr   {se:.6f}\n"
          f"|z|      {z:.3f}\nresult   {'PASS' if passed else 'FAIL'} (tolerance {cfg['tolerance']} se)")
    if cfg["strict"] and not passed:
        raise RuntimeError("equivalence check failed")
    return [path]


def _clock(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cmd_bench(cfg, out):
    rng = Rng(cfg["seed"])
    m, k = cfg["m"], cfg["k"]
    t = rng.child(0).normal((k, m))
    rows = []
    for n in cfg["ns"]:
        X = rng.child(1, n).normal((n, m))
        Y = rng.child(2, n).normal((n, m)) + 0.1
        for est in cfg["estimators"]:
            if est == "ecfd":
                secs = _clock(lambda: cfd.ecfd(X, Y, t), cfg["repeats"])
            else:
                secs = _clock(lambda: cfd.mmd2(X, Y, cfd.KernelSpec.rbf(1.0), biased=True),
                              1 if n > 20000 else cfg["repeats"])
            rows.append({"n": n, "estimator": est, "seconds": secs})
            print(f"n={n:<8d} {est:<5s} {secs:.6f}s", flush=True)
    path = out / "bench.csv"
    _write_csv(path, ("n", "estimator", "seconds"), rows)
    return [path]


COMMANDS = {"testpower": cmd_testpower, "null": cmd_null, "gan": cmd_gan,
            "equiv": cmd_equiv, "bench": cmd_bench}


def run(command, cfg):
    """Validate ``cfg``, run ``command`` and write its manifest; returns output paths."""
    _validate(command, cfg)
    out = _prepare_out(command, cfg)
    outputs = COMMANDS[command](cfg, out)
    _write_manifest(out, command, cfg, outputs)
    return outputs


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    explicit = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose", "manifest")}
    try:
        if args.command == "replay":
            try:
                command = json.loads(Path(args.manifest).read_text())["command"]
            except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot replay {args.manifest}: {exc}")
            cfg = resolve(command, explicit, args.manifest)
        else:
            command = args.command
            cfg = resolve(command, explicit, args.config)
        run(command, cfg)
    except UsageError as exc:
        parser.error(str(exc))
    except Exception as exc:  # runtime aborts: non-finite losses, failed strict checks
        log.error("%s", exc)
        print(f"cfgan: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
