"""Command-line entry point: ``scorelab <subcommand> [--config run.json] [flags]``.

Subcommands: schedule, trace, sample, train, eval, check. Every run writes a
``manifest.json`` holding the resolved configuration, where each value came
from, the seed, library versions and wall-clock time.

Configs are JSON objects of blocks (``schedule``, ``dataset``, ``model``,
``trainer``, ``sampler``, ``metrics``, ...) plus top-level ``seed`` and
``out_dir``. Keys outside the subcommand's schema are rejected.
"""

from __future__ import annotations

import argparse
import contextlib
import copy
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

import scorelab
from scorelab.errors import ConfigError, DivergenceError, NonFiniteError, ScoreLabError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_CHECK_FAILED = 4

log = logging.getLogger("scorelab")

PUBLISHED = "published setting"
DECLARED = "declared default"
DERIVED = "derived at run time"


def _d(value, source=DECLARED):
    return {"value": value, "source": source}


_SCHEDULE_REF = {
    "sigma1": _d(50.0, PUBLISHED + " (32x32 image schedule)"),
    "sigmaL": _d(0.01, PUBLISHED),
    "L": _d(232, PUBLISHED + " (32x32 image schedule)"),
}

_DATASET = {
    "name": _d("grid25"),
    "n": _d(10_000),
    "seed": _d(1),
    "path": _d(None),
    "spacing": _d(2.0),
    "tau": _d(0.05),
    "noise": _d(0.05),
}

_TRAINER = {
    "iterations": _d(20_000),
    "batch_size": _d(128, PUBLISHED),
    "sigma1": _d(None, DERIVED + ": largest pairwise distance of the training data"),
    "sigmaL": _d(0.01, PUBLISHED),
    "L": _d(50),
    "lam": _d(1.0, PUBLISHED),
    "n_d": _d(1, PUBLISHED),
    "adv_weight": _d(1.0),
    "score_lr": _d(3e-3),
    "score_optim": _d(None, PUBLISHED + ": Adam (0, 0.9) when adversarial, (0.9, 0.999) otherwise"),
    "disc_optim": _d({"lr": 1e-3, "beta1": -0.5, "beta2": 0.9, "eps": 1e-8}, PUBLISHED + " (moments)"),
    "ema": _d(0.999, PUBLISHED),
    "hidden": _d([128, 128, 128]),
    "disc_hidden": _d([128, 128, 128]),
    "activation": _d("softplus"),
    "conditional": _d(False),
    "checkpoint_every": _d(2500, PUBLISHED),
    "log_every": _d(100),
    "adversarial": _d(False),
}

SCHEMAS = {
    "schedule": {
        "schedule": {**_SCHEDULE_REF, "n_sigma": _d(1), "epsilon": _d(None), "eta": _d(None)},
    },
    "trace": {
        "schedule": dict(_SCHEDULE_REF),
        "trace": {
            "eta": _d(0.1),
            "n_sigma": _d(1),
            "compare_n_sigma": _d([1, 2, 5]),
            "v0": _d(None, DERIVED + ": sigma1 / gamma"),
            "svg": _d(False),
        },
    },
    "sample": {
        "schedule": {
            "sigma1": _d(None, DERIVED + ": checkpoint header, else largest pairwise distance of the data"),
            "sigmaL": _d(0.01, PUBLISHED),
            "L": _d(50),
        },
        "dataset": dict(_DATASET),
        "model": {
            "kind": _d("analytic"),
            "checkpoint": _d(None),
            "use_ema": _d(True),
        },
        "sampler": {
            "variant": _d("cas"),
            "eta": _d(0.5),
            "epsilon": _d(None, DERIVED + ": eta * sigmaL^2"),
            "n_sigma": _d(1),
            "denoise": _d(True),
            "init": _d("noise"),
            "sigma0": _d(None, DERIVED + ": sigma1 / gamma"),
            "n_chains": _d(2600),
            "seed": _d(None, DERIVED + ": top-level seed"),
            "trajectory_chains": _d(0),
            "svg": _d(False),
        },
    },
    "train": {
        "dataset": dict(_DATASET),
        "trainer": dict(_TRAINER),
    },
    "eval": {
        "dataset": dict(_DATASET),
        "metrics": {
            "samples": _d(None),
            "centers": _d("grid25"),
            "threshold": _d(0.15, DECLARED + ": three mixture standard deviations"),
            "n_reference": _d(2600),
        },
    },
    "check": {
        "check": {"only": _d([])},
    },
}


# configuration ------------------------------------------------------------------


def resolve_config(command: str, user: dict, overrides: dict):
    """Merge defaults, the JSON config and flag overrides.

    Returns (resolved config, provenance). Unknown blocks or keys raise
    ConfigError.
    """
    schema = SCHEMAS[command]
    cfg = {"seed": 0, "out_dir": None}
    prov = {"seed": DECLARED, "out_dir": DECLARED}
    for block, fields in schema.items():
        cfg[block] = {k: copy.deepcopy(v["value"]) for k, v in fields.items()}
        prov[block] = {k: v["source"] for k, v in fields.items()}

    def apply(src: dict, origin: str):
        for key, value in src.items():
            if key in ("seed", "out_dir"):
                cfg[key] = value
                prov[key] = origin
                continue
            if key not in schema:
                raise ConfigError(f"unknown config block {key!r} for {command} (allowed: {sorted(schema)})")
            if not isinstance(value, dict):
                raise ConfigError(f"config block {key!r} must be an object")
            for k, v in value.items():
                if k not in schema[key]:
                    raise ConfigError(f"unknown key {key}.{k} for {command} (allowed: {sorted(schema[key])})")
                cfg[key][k] = v
                prov[key][k] = origin

    apply(user, "config file")
    apply(overrides, "command line")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ConfigError("seed must be an integer")
    return cfg, prov


def _set_override(overrides: dict, dotted: str, value):
    if value is None:
        return
    if "." in dotted:
        block, key = dotted.split(".", 1)
        overrides.setdefault(block, {})[key] = value
    else:
        overrides[dotted] = value


def _parse_set(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects block.key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_override(out, key, value)
    return out


def _number(value, name, kind=float, positive=True, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    value = kind(value)
    if positive and not value > 0:
        raise ConfigError(f"{name} must be positive, got {value!r}")
    return value


# manifests and outputs ---------------------------------------------------------------


def versions() -> dict:
    import scipy

    return {
        "scorelab": scorelab.__version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _out_dir(cfg) -> Path:
    out = Path(cfg["out_dir"] or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(block: dict, seed_default: int):
    from scorelab import analytic

    if block["path"]:
        return analytic.read_points_csv(block["path"])
    name = block["name"]
    n = _number(block["n"], "dataset.n", int)
    seed = block["seed"] if block["seed"] is not None else seed_default
    try:
        if name == "grid25":
            return analytic.gen_grid25(n, spacing=block["spacing"], tau=block["tau"], seed=seed).points
        if name in ("swiss_roll", "swiss-roll"):
            return analytic.gen_swiss_roll(n, noise=block["noise"], seed=seed).points
        if name == "dirac":
            return analytic.gen_dirac(n, [0.0, 0.0]).points
    except ValueError as err:
        raise ConfigError(str(err)) from err
    raise ConfigError(f"unknown dataset {name!r} (grid25, swiss_roll, dirac)")


# subcommands -----------------------------------------------------------------------


def cmd_schedule(cfg, out: Path) -> dict:
    from scorelab.schedules import cas_constants, dilate, geometric_schedule

    s = cfg["schedule"]
    sched = geometric_schedule(
        _number(s["sigma1"], "schedule.sigma1"),
        _number(s["sigmaL"], "schedule.sigmaL"),
        _number(s["L"], "schedule.L", int),
    )
    n_sigma = _number(s["n_sigma"], "schedule.n_sigma", int)
    if n_sigma > 1:
        sched = dilate(sched, n_sigma)
    doc = sched.to_dict()
    if s["epsilon"] is not None and s["eta"] is not None:
        raise ConfigError("give at most one of schedule.epsilon and schedule.eta")
    epsilon = s["epsilon"]
    if s["eta"] is not None:
        epsilon = _number(s["eta"], "schedule.eta") * sched.sigmaL**2
    if epsilon is not None:
        c = cas_constants(sched, _number(epsilon, "schedule.epsilon"))
        doc["sampler_constants"] = {"epsilon": c.epsilon, "eta": c.eta, "beta": c.beta}
    write_json(out / "schedule.json", doc)
    print(json.dumps({k: v for k, v in doc.items() if k != "sigmas"}, indent=2))
    return {"outputs": ["schedule.json"], "summary": {k: v for k, v in doc.items() if k != "sigmas"}}


def cmd_trace(cfg, out: Path) -> dict:
    from scorelab.noisetrace import figure_rows, write_trace_csv
    from scorelab.schedules import geometric_schedule
    from scorelab.svg import line_chart

    s, t = cfg["schedule"], cfg["trace"]
    sched = geometric_schedule(
        _number(s["sigma1"], "schedule.sigma1"),
        _number(s["sigmaL"], "schedule.sigmaL"),
        _number(s["L"], "schedule.L", int),
    )
    eta = _number(t["eta"], "trace.eta")
    n_sigma = _number(t["n_sigma"], "trace.n_sigma", int)
    v0 = _number(t["v0"], "trace.v0", allow_none=True)
    try:
        rows = figure_rows(sched, eta, n_sigma, v0)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    write_trace_csv(rows, out / "trace.csv")
    outputs = ["trace.csv"]
    # level-end ALS std for each compared n_sigma, against the schedule
    compare = {}
    for n in t["compare_n_sigma"]:
        n = _number(n, "trace.compare_n_sigma", int)
        r = figure_rows(sched, eta, n, v0)
        compare[n] = np.array([row[3] for row in r])[n - 1 :: n]
    with open(out / "trace_levels.csv", "w") as fh:
        fh.write("level,sigma_t," + ",".join(f"v_als_nsigma{n}" for n in compare) + "\n")
        for i, sig in enumerate(sched.sigmas):
            fh.write(f"{i},{sig!r}," + ",".join(repr(float(v[i])) for v in compare.values()) + "\n")
    outputs.append("trace_levels.csv")
    if t["svg"]:
        levels = np.arange(sched.L)
        series = {"schedule (CAS)": sched.sigmas}
        series.update({f"ALS n_sigma={n}": v for n, v in compare.items()})
        line_chart(levels, series, out / "trace.svg", title=f"noise std per level, eta={eta}", log_y=True,
                   xlabel="level", ylabel="std")
        diffs = {f"n_sigma={n}": v - sched.sigmas for n, v in compare.items()}
        line_chart(levels, diffs, out / "trace_diff.svg", title="ALS minus CAS noise std", log_y=True,
                   xlabel="level", ylabel="difference")
        outputs += ["trace.svg", "trace_diff.svg"]
    final = rows[-1]
    summary = {
        "final_v_als": final[3],
        "final_sigma": final[2],
        "max_cas_deviation": max(abs(r[4] - r[2]) for r in rows),
        "min_diff": min(r[5] for r in rows),
    }
    print(json.dumps(summary, indent=2))
    return {"outputs": outputs, "summary": summary}


def _sample_model(cfg, data):
    from scorelab import analytic
    from scorelab.nn import load_checkpoint
    from scorelab.sampler import AnalyticScore, AnalyticUnconditionalScore, NetScore
    from scorelab.schedules import geometric_schedule, sigma1_from_data

    m, s, d = cfg["model"], cfg["schedule"], cfg["dataset"]
    header_sched = {}
    if m["kind"] == "checkpoint":
        if not m["checkpoint"]:
            raise ConfigError("model.kind 'checkpoint' needs model.checkpoint")
        net, header, ema = load_checkpoint(m["checkpoint"])
        header_sched = header.get("schedule", {})
        params = ema.shadow if (m["use_ema"] and ema is not None) else None
        model = NetScore(net, bool(header.get("conditional", False)), params=params)
    elif m["kind"] not in ("analytic", "analytic_unconditional"):
        raise ConfigError(f"unknown model.kind {m['kind']!r} (analytic, analytic_unconditional, checkpoint)")
    user_set = cfg["_prov"]["schedule"]

    def pick(key):
        # explicit settings win, then the checkpoint's own schedule, then defaults
        if user_set[key] in ("config file", "command line") or key not in header_sched:
            return s[key]
        return header_sched[key]

    sigma1 = pick("sigma1")
    if sigma1 is None:
        sigma1 = sigma1_from_data(data)
    sched = geometric_schedule(_number(sigma1, "schedule.sigma1"), _number(pick("sigmaL"), "schedule.sigmaL"),
                               _number(pick("L"), "schedule.L", int))
    if m["kind"] == "checkpoint":
        return model, sched
    if d["name"] == "grid25" and not d["path"]:
        mix = analytic.grid25_mixture(d["spacing"], d["tau"])
    elif d["name"] == "dirac" and not d["path"]:
        mix = analytic.GaussianMixture.dirac([0.0, 0.0])
    else:
        raise ConfigError("analytic models exist for the grid25 and dirac datasets only")
    if m["kind"] == "analytic":
        return AnalyticScore(mix), sched
    return AnalyticUnconditionalScore(mix, sched), sched


def cmd_sample(cfg, out: Path) -> dict:
    from scorelab import analytic
    from scorelab.sampler import SampleRunConfig, TrajectoryRecorder, run_sampler
    from scorelab.svg import scatter

    data = _load_data(cfg["dataset"], cfg["seed"])
    model, sched = _sample_model(cfg, data)
    sp = cfg["sampler"]
    eta = sp["eta"]
    epsilon = sp["epsilon"]
    if epsilon is None:
        epsilon = _number(eta, "sampler.eta") * sched.sigmaL**2
    elif cfg["_prov"]["sampler"]["eta"] in ("config file", "command line"):
        raise ConfigError("give at most one of sampler.eta and sampler.epsilon")
    run = SampleRunConfig(
        variant=sp["variant"],
        epsilon=_number(epsilon, "sampler.epsilon"),
        n_sigma=_number(sp["n_sigma"], "sampler.n_sigma", int),
        denoise=bool(sp["denoise"]),
        init=sp["init"],
        n_chains=_number(sp["n_chains"], "sampler.n_chains", int),
        seed=int(sp["seed"] if sp["seed"] is not None else cfg["seed"]),
        sigma0=_number(sp["sigma0"], "sampler.sigma0", allow_none=True),
    )
    n_traj = int(sp["trajectory_chains"])
    rec = TrajectoryRecorder(np.arange(min(n_traj, run.n_chains))) if n_traj > 0 else None
    callback = None
    if rec is not None:
        def callback(step, level, sigma, x):
            rec(step, level, sigma, x[: len(rec.chains)])
    samples, raw = run_sampler(model, sched, run, data=data, callback=callback)
    analytic.write_points_csv(samples, out / "samples.csv")
    analytic.write_points_csv(raw, out / "samples_raw.csv")
    outputs = ["samples.csv", "samples_raw.csv"]
    if rec is not None:
        d = samples.shape[1]
        with open(out / "trajectory.csv", "w") as fh:
            fh.write("step,chain," + ",".join(f"x{j}" for j in range(d)) + "\n")
            for row in rec.rows:
                fh.write(f"{row[0]},{row[1]}," + ",".join(repr(v) for v in row[2:]) + "\n")
        outputs.append("trajectory.csv")
    if sp["svg"] and samples.shape[1] == 2:
        scatter([(data[:2000], "#999999", "data"), (samples, "#1f77b4", "samples")], out / "samples.svg",
                title=f"{run.variant} samples")
        outputs.append("samples.svg")
    summary = {"n_samples": int(samples.shape[0]), "schedule": {k: v for k, v in sched.to_dict().items() if k != "sigmas"},
               "epsilon": run.epsilon, "eta": run.epsilon / sched.sigmaL**2, "seed": run.seed}
    return {"outputs": outputs, "summary": summary}


def cmd_train(cfg, out: Path) -> dict:
    from scorelab.training import TrainConfig, train_dsm, train_hybrid

    data = _load_data(cfg["dataset"], cfg["seed"])
    t = dict(cfg["trainer"])
    adversarial = bool(t.pop("adversarial"))
    t["seed"] = cfg["seed"]
    t["out_dir"] = str(out / "checkpoints")
    try:
        tc = TrainConfig(**t)
    except TypeError as err:
        raise ConfigError(str(err)) from err
    trainer = train_hybrid if adversarial else train_dsm
    state, report = trainer(tc, data)
    report.write_csv(out / "losses.csv")
    summary = {
        "iterations": state.step,
        "discriminator_steps": state.d_steps,
        "final_dsm_loss": report.dsm_loss[-1] if report.dsm_loss else None,
        "checkpoint": report.checkpoint,
        "schedule": {k: v for k, v in state.schedule.to_dict().items() if k != "sigmas"},
        "train_seconds": report.wall_clock,
    }
    print(json.dumps(summary, indent=2))
    return {"outputs": ["losses.csv", *[str(Path(p).relative_to(out)) for p in report.checkpoints],
                        str(Path(report.checkpoint).relative_to(out))], "summary": summary}


def cmd_eval(cfg, out: Path) -> dict:
    from scorelab import analytic, metrics

    m = cfg["metrics"]
    if not m["samples"]:
        raise ConfigError("eval needs metrics.samples (a CSV of points)")
    samples = analytic.read_points_csv(m["samples"])
    d = cfg["dataset"]
    if m["centers"] == "grid25":
        centers = analytic.grid25_centers(d["spacing"])
    elif m["centers"] == "data":
        centers = _load_data(d, cfg["seed"])
    else:
        centers = analytic.read_points_csv(m["centers"])
    threshold = _number(m["threshold"], "metrics.threshold")
    report = metrics.mode_coverage(samples, centers, threshold)
    ref_block = dict(d, n=_number(m["n_reference"], "metrics.n_reference", int))
    reference = _load_data(ref_block, cfg["seed"])
    result = {
        "mode": report.to_dict(),
        "mean_nearest_mode_distance": metrics.mean_nearest_mode_distance(samples, centers),
        "energy_distance": metrics.energy_distance(samples, reference),
        "n_samples": int(samples.shape[0]),
    }
    write_json(out / "report.json", result)
    with open(out / "report.csv", "w") as fh:
        fh.write(",".join([*metrics.ModeReport.CSV_HEADER, "mean_nearest_mode_distance", "energy_distance"]) + "\n")
        row = [*report.csv_row(), result["mean_nearest_mode_distance"], result["energy_distance"]]
        fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    print(json.dumps({k: v for k, v in result.items() if k != "mode"} | {"covered": report.covered, "kl": report.kl},
                     indent=2))
    return {"outputs": ["report.json", "report.csv"], "summary": result}


def cmd_check(cfg, out: Path) -> dict:
    from scorelab.checks import CHECKS, run_checks

    only = set(cfg["check"]["only"] or [])
    known = {fn.__name__.removeprefix("check_") for fn in CHECKS}
    if only - known:
        raise ConfigError(f"unknown checks {sorted(only - known)} (known: {sorted(known)})")
    results = run_checks(only=only or None)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: measured {r.measured:.3e} (tolerance {r.tolerance:.1e}) {r.detail}")
    doc = {"passed": all(r.passed for r in results), "checks": [r.to_dict() for r in results]}
    write_json(out / "check.json", doc)
    return {"outputs": ["check.json"], "summary": doc, "failed": not doc["passed"]}


COMMANDS = {
    "schedule": cmd_schedule,
    "trace": cmd_trace,
    "sample": cmd_sample,
    "train": cmd_train,
    "eval": cmd_eval,
    "check": cmd_check,
}


# argument parsing -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scorelab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"scorelab {scorelab.__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output directory (default: out_dir from the config, else .)")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--threads", type=int, help="cap on BLAS/OpenMP threads")
    common.add_argument("--set", action="append", metavar="BLOCK.KEY=VALUE", help="override any config key (JSON value)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", parents=[common], help="geometric schedule and sampler constants")
    p.add_argument("--sigma1", type=float, dest="schedule.sigma1")
    p.add_argument("--sigmaL", type=float, dest="schedule.sigmaL")
    p.add_argument("--L", type=int, dest="schedule.L")
    p.add_argument("--nsigma", type=int, dest="schedule.n_sigma", help="dilate by this many steps per level")
    p.add_argument("--epsilon", type=float, dest="schedule.epsilon")
    p.add_argument("--eta", type=float, dest="schedule.eta")

    p = sub.add_parser("trace", parents=[common], help="idealised ALS/CAS noise-std traces")
    p.add_argument("--sigma1", type=float, dest="schedule.sigma1")
    p.add_argument("--sigmaL", type=float, dest="schedule.sigmaL")
    p.add_argument("--L", type=int, dest="schedule.L")
    p.add_argument("--eta", type=float, dest="trace.eta")
    p.add_argument("--nsigma", type=int, dest="trace.n_sigma")
    p.add_argument("--v0", type=float, dest="trace.v0")
    p.add_argument("--svg", action="store_const", const=True, dest="trace.svg")

    p = sub.add_parser("sample", parents=[common], help="draw samples with ALS or CAS")
    p.add_argument("--checkpoint", dest="model.checkpoint")
    p.add_argument("--model", choices=["analytic", "analytic_unconditional", "checkpoint"], dest="model.kind")
    p.add_argument("--variant", choices=["als", "cas"], dest="sampler.variant")
    p.add_argument("--eta", type=float, dest="sampler.eta")
    p.add_argument("--epsilon", type=float, dest="sampler.epsilon")
    p.add_argument("--nsigma", type=int, dest="sampler.n_sigma")
    p.add_argument("--chains", type=int, dest="sampler.n_chains")
    p.add_argument("--no-denoise", action="store_const", const=False, dest="sampler.denoise")
    p.add_argument("--svg", action="store_const", const=True, dest="sampler.svg")

    p = sub.add_parser("train", parents=[common], help="train a score network")
    p.add_argument("--iterations", type=int, dest="trainer.iterations")
    p.add_argument("--adversarial", action="store_const", const=True, dest="trainer.adversarial")
    p.add_argument("--dataset", dest="dataset.name")

    p = sub.add_parser("eval", parents=[common], help="mode coverage, KL and distances of a sample CSV")
    p.add_argument("--samples", dest="metrics.samples")
    p.add_argument("--threshold", type=float, dest="metrics.threshold")

    p = sub.add_parser("check", parents=[common], help="run the identity battery")
    p.add_argument("--only", nargs="+", dest="check.only")
    return parser


def _flag_overrides(args) -> dict:
    out = _parse_set(args.set)
    for key, value in vars(args).items():
        if "." in key:
            _set_override(out, key, value)
    if args.seed is not None:
        out["seed"] = args.seed
    if args.out is not None:
        out["out_dir"] = args.out
    return out


def _read_config(path):
    if not path:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if not isinstance(doc, dict):
        raise ConfigError("the config must be a JSON object")
    return doc


def _thread_limit(n):
    if n is None:
        return contextlib.nullcontext()
    if n < 1:
        raise ConfigError("--threads must be at least 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    t0 = time.perf_counter()
    manifest = {"command": args.command, "argv": list(sys.argv[1:] if argv is None else argv),
                "versions": versions(), "status": "error"}
    out = None
    try:
        cfg, prov = resolve_config(args.command, _read_config(args.config), _flag_overrides(args))
        out = _out_dir(cfg)
        manifest.update(config=cfg, provenance=prov, seed=cfg["seed"], threads=args.threads)
        cfg = dict(cfg, _prov=prov)
        with _thread_limit(args.threads):
            result = COMMANDS[args.command](cfg, out)
        manifest["outputs"] = result["outputs"]
        manifest["summary"] = result.get("summary")
        code = EXIT_CHECK_FAILED if result.get("failed") else EXIT_OK
        manifest["status"] = "check failed" if code else "ok"
    except (DivergenceError, NonFiniteError) as err:
        log.error("numerical divergence: %s", err)
        manifest["error"] = str(err)
        code = EXIT_DIVERGENCE
    except (ConfigError, ScoreLabError, ValueError, OSError) as err:
        log.error("configuration error: %s", err)
        manifest["error"] = str(err)
        code = EXIT_CONFIG
    manifest["wall_clock_seconds"] = time.perf_counter() - t0
    manifest["exit_code"] = code
    if out is None and args.out:
        # the config never resolved; still leave a record where the user asked
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
    if out is not None:
        write_json(out / "manifest.json", manifest)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
