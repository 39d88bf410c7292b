"""Command-line entry point: build, run, plot.

Exit codes: 0 all checks pass, 1 some check failed, 2 usage error,
3 resource guard (resolution or cell cap).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import DEFAULTS, ConfigError, RunConfig, load_config, parse_list
from .report import ExperimentReport, merge
from .schedule import ResolutionError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_GUARD = 0, 1, 2, 3

EXPERIMENTS = ("doubling", "ball-shape", "metric-axioms", "paths", "energy-bound",
               "energy-bound-l2", "orthogonality", "telescoping", "collapse", "collapse-l2",
               "diff-decay", "tangent", "gate-frequency", "radial", "harmonic-checks")

# experiments that read the cached complex
USES_CACHE = {"doubling", "ball-shape", "metric-axioms", "paths", "orthogonality", "telescoping"}


class UsageError(Exception):
    pass


class MissingCache(UsageError):
    pass


# ------------------------------------------------------------------ cache

def cache_path(cfg: RunConfig) -> Path:
    return Path(cfg.cache_dir) / f"complex-{cfg.complex_key()}.json"


def build_cached(cfg: RunConfig, log=print) -> tuple:
    """(path, hit) for the configured complex, building it if absent."""
    from .complex import build_complex
    from .schedule import build_schedule
    path = cache_path(cfg)
    if path.is_file():
        return path, True
    try:
        sched = build_schedule(cfg.n0, cfg.depth, cfg.toy_mode,
                               subdivision=cfg.subdivision or None, warn=False)
    except ResolutionError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    space = build_complex(sched, cfg.levels, cfg.max_cells)
    for j in range(cfg.levels + 1):
        space.cells(j)  # enforce the cell guard at build time
    text = space.dumps()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(text)
        tmp.replace(path)
    except OSError as exc:
        raise UsageError(f"cannot write cache {path}: {exc}") from None
    return path, False


def load_cached(cfg: RunConfig, auto_build: bool = False):
    from .complex import Complex
    path = cache_path(cfg)
    if not path.is_file():
        if not auto_build:
            raise MissingCache(f"no cached complex at {path}; run `diamondspace build` with the "
                               "same configuration or pass --auto-build")
        build_cached(cfg)
    space = Complex.from_dict(json.loads(path.read_text()))
    space.max_cells = cfg.max_cells
    return space


# ------------------------------------------------------------ experiments

def _macshane(space, cfg, count, m=1):
    from .functions import LipschitzFunctionSpec
    return [LipschitzFunctionSpec("random-MacShane", m=m, seed=cfg.seed + i, count=count).build(space)
            for i in range(cfg.functions)]


def _run_experiment(name: str, cfg: RunConfig, auto_build: bool) -> ExperimentReport:
    from . import experiments as X
    from .complex import Complex, build_complex
    from .functions import LipschitzFunctionSpec
    from .harmonic import energy as H
    from .harmonic.piecewise import check_orthogonality, check_telescoping
    from .measure import verify_ball_shape, verify_doubling, verify_lebesgue_doubling
    from .complex import sample_mu
    from .rng import make_rng
    from .schedule import build_schedule

    space = load_cached(cfg, auto_build) if name in USES_CACHE else None
    seed = cfg.seed
    if name == "doubling":
        a = verify_doubling(space, trials=cfg.trials, seed=seed, samples=cfg.samples)
        b = verify_lebesgue_doubling(space, seed=seed)
        rep = merge("doubling", [a, b], seed)
    elif name == "ball-shape":
        if not 0 <= cfg.ball_l <= cfg.levels:
            raise UsageError("ball_l must lie in 0..levels")
        reps = []
        for i in range(cfg.centers):
            p = sample_mu(space.schedule, space.level, 1, make_rng(seed, 81, i))[0]
            reps.append(verify_ball_shape(space, p, cfg.ball_l, cfg.ball_r, cfg.ball_samples,
                                          seed + i))
        rep = merge("ball-shape", reps, seed)
    elif name == "metric-axioms":
        rep = X.metric_axioms(space, cfg.triples, seed, cfg.delta)
    elif name == "paths":
        a = X.path_checks(space, cfg.centers, cfg.path_r, cfg.path_eps, seed)
        b = X.density_check(space, cfg.path_r, cfg.density_eps, cfg.density_points, 1, seed)
        rep = merge("paths", [a, b], seed)
    elif name == "energy-bound":
        s = [1.0 / v for v in parse_list(cfg.s_fractions)]
        rep = H.check_energy_lower_bound(1.0, s, parse_list(cfg.etas),
                                         parse_list(cfg.ladder, int), cfg.tol)
    elif name == "energy-bound-l2":
        s = [1.0 / v for v in parse_list(cfg.s_fractions)]
        rep = H.check_l2_energy_lower_bound(1.0, s, 1.0, cfg.cap_c, cfg.components,
                                            parse_list(cfg.ladder, int), seed, cfg.tol)
    elif name == "radial":
        rep = H.radial_benchmark(parse_list(cfg.radial_ladder, int), tol=cfg.tol)
    elif name == "harmonic-checks":
        rep = merge("harmonic-checks", [H.check_symmetrization(seed=seed),
                                        H.check_harmonic_minimality(seed=seed),
                                        H.interior_estimate(seed=seed)], seed)
    elif name == "orthogonality":
        fs = _macshane(space, cfg, cfg.macshane_count)
        rep = check_orthogonality(space, fs, parse_list(cfg.harmonic_levels, int),
                                  parse_list(cfg.cell_ladder, int))
    elif name == "telescoping":
        fs = _macshane(space, cfg, cfg.macshane_count)
        rep = check_telescoping(space, fs, parse_list(cfg.harmonic_levels, int),
                                parse_list(cfg.cell_ladder, int)[-1])
    elif name in ("collapse", "collapse-l2"):
        mode = "real" if name == "collapse" else "l2"
        L = cfg.collapse_levels
        cx = build_complex(X.collapse_schedule(cfg.n0, L, cfg.collapse_subdivision), L)
        m = 1 if mode == "real" else cfg.components
        coeffs = tuple(float(v) for v in range(1, 3 * m + 1))
        aff = LipschitzFunctionSpec("affine", m=m, coeffs=coeffs).build(cx)
        fs = [aff] + _macshane(cx, cfg, cfg.collapse_count, m)
        rep = X.gate_collapse_sweep(cx, fs, cfg.eps, L, mode, cfg.collapse_bound)
        rep.seed = seed
    elif name == "diff-decay":
        depth = max(cfg.depth, cfg.diff_levels + 4)
        cx = Complex(build_schedule(cfg.n0, depth, cfg.toy_mode,
                                    subdivision=cfg.subdivision or None, warn=False),
                     cfg.diff_levels)
        fs = [LipschitzFunctionSpec("coordinate").build(cx),
              LipschitzFunctionSpec("distance-to-point", seed=seed).build(cx),
              LipschitzFunctionSpec("distance-to-gate-set", depth=1).build(cx)]
        rep = X.differentiability_decay(cx, fs, cfg.diff_samples, parse_list(cfg.radii),
                                        cfg.diff_eps, seed)
    elif name == "tangent":
        rep = X.tangent_disconnection(1, cfg.tangent_samples, seed, cfg.tangent_n0)
    elif name == "gate-frequency":
        rep = X.gate_hitting_frequency(cfg.gate_trials, cfg.blocks, seed, cfg.n0, cfg.toy_mode,
                                       cfg.subdivision or None)
    else:
        raise UsageError(f"unknown experiment {name!r}")
    if rep.seed is None:
        rep.seed = seed
    rep.name = name  # report files are named after the experiment
    return rep


def write_report(rep: ExperimentReport, cfg: RunConfig, elapsed: float) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        h = cfg.config_hash()
        (out / f"{rep.name}.csv").write_text(rep.to_csv(h))
        (out / f"{rep.name}.json").write_text(rep.to_json(h))
        # timestamps live only in the sidecar
        meta = {"experiment": rep.name, "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
                "seconds": round(elapsed, 3)}
        (out / f"{rep.name}.meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    except OSError as exc:
        raise UsageError(f"cannot write reports to {out}: {exc}") from None
    return out / f"{rep.name}.json"


def _worker(args):
    name, values, auto_build = args
    cfg = RunConfig(dict(values))
    t0 = time.perf_counter()
    try:
        rep = _run_experiment(name, cfg, auto_build)
    except (ConfigError, UsageError, ResolutionError, MissingCache):
        raise
    except Exception as exc:  # a crashed experiment is a failed experiment
        rep = ExperimentReport(name, {}, seed=cfg.seed)
        rep.check("error", f"{type(exc).__name__}: {exc}", None, False)
    return rep, time.perf_counter() - t0


def cmd_build(cfg: RunConfig) -> int:
    path, hit = build_cached(cfg)
    print(f"{'cache hit' if hit else 'built'}: {path}")
    return EXIT_OK


def cmd_run(name: str, cfg: RunConfig, auto_build: bool = False) -> int:
    names = list(EXPERIMENTS) if name == "all" else [name]
    for n in names:
        if n not in EXPERIMENTS:
            raise UsageError(f"unknown experiment {n!r}; choose from {', '.join(EXPERIMENTS)} or all")
    if any(n in USES_CACHE for n in names):
        if auto_build:
            build_cached(cfg)
        elif not cache_path(cfg).is_file():
            load_cached(cfg)  # raises MissingCache
    jobs = [(n, cfg.values, auto_build) for n in names]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_worker, jobs))
    else:
        results = [_worker(j) for j in jobs]
    ok = True
    for rep, elapsed in results:
        path = write_report(rep, cfg, elapsed)
        svg, _ = render_svg(path)  # a report with nothing numeric gets no figure
        status = "PASS" if rep.passed else "FAIL"
        print(f"{status} {rep.name}: {path}" + (f" ({svg.name})" if svg else ""))
        ok &= rep.passed
    if name == "all":
        h = cfg.config_hash()
        doc = {"version": 1, "config_hash": h, "seed": cfg.seed, "passed": ok,
               "experiments": {rep.name: json.loads(rep.to_json(h)) for rep, _ in results}}
        (Path(cfg.output_dir) / "summary.json").write_text(
            json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if ok else EXIT_FAIL


# ------------------------------------------------------------------ plots

def _read_rows(csv_path: Path) -> list:
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        params = {}
        for part in filter(None, r["params"].split(";")):
            k, _, v = part.partition("=")
            params[k] = v
        r["params"] = params
    return rows


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


def cmd_plot(report: str) -> int:
    out, msg = render_svg(report)
    if out is None:
        print(msg, file=sys.stderr)
        return EXIT_FAIL
    print(f"wrote {out}")
    return EXIT_OK


def render_svg(report) -> tuple:
    """(svg path, None) or (None, reason) when there is nothing to draw."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "diamondspace"
    matplotlib.rcParams["svg.fonttype"] = "none"

    path = Path(report)
    json_path = path.with_suffix(".json")
    csv_path = path.with_suffix(".csv")
    if not json_path.is_file() or not csv_path.is_file():
        raise UsageError(f"need both {json_path.name} and {csv_path.name}")
    try:
        doc = json.loads(json_path.read_text())
        rows = _read_rows(csv_path)
        name = doc["experiment"]
    except (ValueError, KeyError) as exc:
        raise UsageError(f"malformed report {path}: {exc}") from None
    numeric = [r for r in rows if _num(r["value"]) is not None]
    if not numeric:
        return None, f"empty report {path}: nothing to plot"
    fig, ax = plt.subplots(figsize=(6, 4))
    if name == "diff-decay":
        by_fn = {}
        for r in numeric:
            if r["statistic"] == "median_remainder":
                by_fn.setdefault(r["params"]["function"], []).append(
                    (float(r["params"]["r"]), float(r["value"])))
        labels = doc.get("params", {}).get("functions", [])
        for fn, pts in sorted(by_fn.items()):
            pts.sort()
            lab = labels[int(fn)] if int(fn) < len(labels) else f"f{fn}"
            ys = [max(y, 1e-16) for _, y in pts]
            ax.loglog([x for x, _ in pts], ys, "o-", label=lab)
        ax.set_xlabel("r")
        ax.set_ylabel("median normalized remainder")
        ax.legend(fontsize=7)
    elif name in ("energy-bound", "energy-bound-l2", "radial", "radial-benchmark"):
        stat = "rel_error_exact" if name.startswith("radial") else "ratio"
        curves = {}
        for r in numeric:
            if r["statistic"] == stat:
                key = ",".join(f"{k}={v}" for k, v in sorted(r["params"].items())
                               if k not in ("n", "energy"))
                curves.setdefault(key, []).append((float(r["params"]["n"]), float(r["value"])))
        for key, pts in sorted(curves.items()):
            pts.sort()
            ax.plot([x for x, _ in pts], [y for _, y in pts], "o-", label=key or stat)
        ax.set_xscale("log", base=2)
        ax.set_xlabel("grid intervals per side")
        ax.set_ylabel(stat)
        ax.legend(fontsize=7)
    else:
        counts = {}
        for r in numeric:
            counts[r["statistic"]] = counts.get(r["statistic"], 0) + 1
        stat = max(sorted(counts), key=lambda k: counts[k])
        vals = [float(r["value"]) for r in numeric if r["statistic"] == stat]
        vals = [v for v in vals if v == v and abs(v) != float("inf")]
        if not vals:
            plt.close(fig)
            return None, f"report {path} has no finite values to plot"
        ax.hist(vals, bins=min(30, max(5, len(vals) // 5)))
        ax.set_xlabel(stat)
        ax.set_ylabel("count")
    ax.set_title(f"{name} ({doc.get('run_id', '')})")
    out = path.with_suffix(".svg")
    fig.tight_layout()
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out, None


# ------------------------------------------------------------------ main

def _parser() -> argparse.ArgumentParser:
    keys = "\n".join(f"  {k} (default {v[0]}): {v[1]}" for k, v in DEFAULTS.items())
    p = argparse.ArgumentParser(prog="diamondspace", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog="config keys:\n" + keys)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--levels", type=int)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--out", dest="output_dir")
        sp.add_argument("--cache", dest="cache_dir")
        sp.add_argument("--workers", type=int)

    b = sub.add_parser("build", help="build and cache the complex")
    common(b)
    r = sub.add_parser("run", help="run an experiment (or all)")
    r.add_argument("experiment", help=", ".join(EXPERIMENTS) + ", all")
    r.add_argument("--auto-build", action="store_true", help="build a missing cache")
    common(r)
    pl = sub.add_parser("plot", help="render a report as SVG")
    pl.add_argument("report", help="report .json or .csv")
    return p


def _config(args) -> RunConfig:
    over = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = v
    for key in ("seed", "levels", "trials", "output_dir", "cache_dir", "workers"):
        v = getattr(args, key, None)
        if v is not None:
            over[key] = str(v)
    return load_config(args.config, over)


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if args.command == "plot":
            return cmd_plot(args.report)
        cfg = _config(args)
        if args.command == "build":
            return cmd_build(cfg)
        return cmd_run(args.experiment, cfg, args.auto_build)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ResolutionError as exc:
        print(f"resource guard: {exc}", file=sys.stderr)
        return EXIT_GUARD


if __name__ == "__main__":
    sys.exit(main())
