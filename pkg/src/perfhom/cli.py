"""``perfhom`` command line: TOML study configs, epsilon sweeps, monitors and reports."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .cache import load_or_build
from .coefficients import CoefficientError, CoefficientField
from .fem import SolverError
from .geometry import GeometryError, PerforationSpec, build_macro_domain
from .solve import data_preset, solve_eps_problem
from .twoscale import ErrorReport, SmoothingKernel
from .verify import (FUNCTIONALS, cell_checks, cz_monitor, extension_monitor, extension_probe, korn_monitor,
                     lipschitz_monitor, lipschitz_probe, muckenhoupt_monitor, plateau_check,
                     quenched_cz_ratio, run_pipeline, run_rate_study, smoothing_monitor)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["ConfigError", "StudyConfig", "load_config", "run_study", "main", "MONITORS", "RATE_COLUMNS"]

log = logging.getLogger("perfhom")

MONITORS = ("cell", "smoothing", "lipschitz", "quenched_cz", "extension", "korn", "muckenhoupt", "plateau")
RATE_COLUMNS = ("study", "tau") + ErrorReport.CSV_COLUMNS
MONITOR_COLUMNS = ("monitor", "case", "epsilon", "value")
DEFAULT_GATES = {"h1": 0.40, "l4": 0.40, "l2": 0.70, "lp": 0.60, "sqfn": 0.70}
EXIT_OK, EXIT_GATE, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid study configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str, line: int | None = None):
        self.field = field_name
        self.line = line
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class StudyConfig:
    n: tuple = (4, 8, 16, 32)
    hole_shape: str = "disk"
    hole_radius: float = 0.25
    coeff_kind: str = "isotropic_lame"
    lam: float = 1.0
    mu: float = 1.0
    amplitude: float = 0.0
    data: str = "boundary"
    scale: float = 1.0
    seed: int = 0
    tau: float = 0.5
    sqfn_tau: float = 0.2
    h_divisor: int = 8
    cell_h: float = 1.0 / 128
    method: str = "direct"
    functionals: tuple = ("h1", "l4", "l2", "lp", "sqfn")
    monitors: tuple = ()
    lipschitz_n: tuple = (8, 16, 32)
    korn_n: tuple = (4, 8, 16)
    plateau_n: int = 8
    muckenhoupt_n: tuple = (8, 32, 128, 512)
    gates: dict = field(default_factory=lambda: dict(DEFAULT_GATES))
    h1_r2: float = 0.9
    output: str = "perfhom-out"
    cache: str | None = ".perfhom-cache"
    workers: int = 1

    @property
    def spec(self) -> PerforationSpec:
        return PerforationSpec(hole_shape=self.hole_shape, hole_radius=self.hole_radius)

    @property
    def coeff(self) -> CoefficientField:
        return CoefficientField(kind=self.coeff_kind, lam=self.lam, mu=self.mu, amplitude=self.amplitude)

    def as_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# (section, key) -> StudyConfig attribute
_KEYS = {
    ("geometry", "n"): "n", ("geometry", "hole_shape"): "hole_shape", ("geometry", "hole_radius"): "hole_radius",
    ("coefficients", "kind"): "coeff_kind", ("coefficients", "lam"): "lam", ("coefficients", "mu"): "mu",
    ("coefficients", "amplitude"): "amplitude",
    ("data", "preset"): "data", ("data", "scale"): "scale", ("data", "seed"): "seed",
    ("study", "tau"): "tau", ("study", "sqfn_tau"): "sqfn_tau", ("study", "h_divisor"): "h_divisor",
    ("study", "cell_h"): "cell_h", ("study", "method"): "method", ("study", "functionals"): "functionals",
    ("study", "monitors"): "monitors",
    ("monitors", "lipschitz_n"): "lipschitz_n", ("monitors", "korn_n"): "korn_n",
    ("monitors", "plateau_n"): "plateau_n", ("monitors", "muckenhoupt_n"): "muckenhoupt_n",
    ("gates", "h1_r2"): "h1_r2",
    ("output", "dir"): "output", ("output", "cache"): "cache", ("output", "workers"): "workers",
}


def _line_of(text: str, section: str, key: str | None) -> int | None:
    """Line number of ``key`` inside ``[section]`` (or of the section header)."""
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if current == section and key is not None and re.match(rf"\s*{re.escape(key)}\s*=", line):
            return i
    return None


def _n_list(v, name):
    if not isinstance(v, list) or not v or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
        raise ConfigError(name, "must be a non-empty list of integers")
    if any(x < 2 for x in v):
        raise ConfigError(name, "every n must be >= 2")
    if any(b <= a for a, b in zip(v, v[1:])):
        raise ConfigError(name, "epsilon = 1/n must be strictly decreasing (n strictly increasing)")
    return tuple(v)


def _number(v, name, lo=None, hi=None, lo_open=True, hi_open=True):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(name, f"must be a finite number, got {v!r}")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(name, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and (v >= hi if hi_open else v > hi):
        raise ConfigError(name, f"must be {'<' if hi_open else '<='} {hi}, got {v}")
    return float(v)


def _validate(raw: dict) -> StudyConfig:
    values = {}
    for section, table in raw.items():
        if not isinstance(table, dict):
            raise ConfigError(section, "must be a table")
        for key, v in table.items():
            name = f"{section}.{key}"
            if section == "gates" and key in DEFAULT_GATES:
                values.setdefault("gates", dict(DEFAULT_GATES))[key] = _number(v, name)
                continue
            if (section, key) not in _KEYS:
                raise ConfigError(name, "unknown key")
            values[_KEYS[(section, key)]] = (name, v)
    out = {}
    for attr, item in values.items():
        if attr == "gates":
            out["gates"] = item
            continue
        name, v = item
        if attr in ("n", "lipschitz_n", "korn_n", "muckenhoupt_n"):
            out[attr] = _n_list(v, name)
        elif attr in ("hole_radius", "lam", "mu", "amplitude", "scale", "h1_r2"):
            out[attr] = _number(v, name)
        elif attr in ("tau", "sqfn_tau"):
            out[attr] = _number(v, name, 0.0, 1.0)
        elif attr == "cell_h":
            out[attr] = _number(v, name, 0.0, 0.5, hi_open=False)
        elif attr in ("h_divisor", "plateau_n", "workers", "seed"):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(name, f"must be an integer, got {v!r}")
            out[attr] = v
        elif attr in ("functionals", "monitors"):
            allowed = FUNCTIONALS if attr == "functionals" else MONITORS
            if not isinstance(v, list) or any(x not in allowed for x in v):
                raise ConfigError(name, f"must be a list drawn from {sorted(allowed)}")
            if len(set(v)) != len(v):
                raise ConfigError(name, "contains duplicates")
            out[attr] = tuple(v)
        elif attr == "cache":
            if not isinstance(v, str):
                raise ConfigError(name, "must be a string (empty disables caching)")
            out[attr] = v or None
        else:
            if not isinstance(v, str):
                raise ConfigError(name, f"must be a string, got {v!r}")
            out[attr] = v
    cfg = StudyConfig(**out)
    if cfg.h_divisor < 8:
        raise ConfigError("study.h_divisor", f"h = eps/{cfg.h_divisor} violates the resolution gate h <= eps/8")
    if cfg.workers < 1:
        raise ConfigError("output.workers", "must be >= 1")
    if cfg.plateau_n < 2:
        raise ConfigError("monitors.plateau_n", "must be >= 2")
    if cfg.method not in ("direct", "cg_jacobi"):
        raise ConfigError("study.method", f"must be 'direct' or 'cg_jacobi', got {cfg.method!r}")
    if abs(round(1 / cfg.cell_h) * cfg.cell_h - 1) > 1e-9:
        raise ConfigError("study.cell_h", "must be 1/m for an integer m")
    try:
        cfg.spec
    except GeometryError as exc:
        raise ConfigError("geometry.hole_radius", str(exc)) from None
    try:
        cfg.coeff
    except CoefficientError as exc:
        raise ConfigError("coefficients", str(exc)) from None
    try:
        data_preset(cfg.data)
    except ValueError as exc:
        raise ConfigError("data.preset", str(exc)) from None
    return cfg


def load_config(path) -> StudyConfig:
    """Parse and validate a TOML study config; errors carry the offending line when known."""
    text = Path(path).read_text()
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError("<toml>", str(exc), int(m.group(1)) if m else None) from None
    try:
        return _validate(raw)
    except ConfigError as exc:
        section, _, key = exc.field.partition(".")
        exc.line = _line_of(text, section, key or None)
        raise


# ---------------------------------------------------------------------------
# jobs

def _eps_job(n: int, cfg: StudyConfig, cs, tasks: tuple) -> dict:
    domain = build_macro_domain("unit_square", n, cfg.spec)
    eps = domain.epsilon
    h = eps / cfg.h_divisor
    data = data_preset(cfg.data, scale=cfg.scale, seed=cfg.seed)
    out = {"n": n}
    pipe = None
    if "rates" in tasks or "extension" in tasks:
        pipe = run_pipeline(domain, cfg.coeff, cs, data, h, cfg.tau, SmoothingKernel(), cfg.method)
        if "rates" in tasks:
            out["report"] = pipe.report.as_dict()
    if "lipschitz" in tasks:
        if cfg.data == "boundary" and cfg.scale == 1.0 and pipe is not None:
            u = pipe.u_eps
        else:
            u = solve_eps_problem(domain, cfg.coeff, data_preset("boundary"), h, cfg.method)
        out["lipschitz"] = lipschitz_probe(u, eps)
    fields = []
    if "quenched_cz" in tasks or "extension" in tasks:
        cz = quenched_cz_ratio(domain, cfg.coeff, h, seed=cfg.seed, method=cfg.method)
        if "quenched_cz" in tasks:
            out["quenched_cz"] = cz["ratios"]
        fields = [cz["fields"]["random_trig"], cz["fields"]["rough"]]
    if "extension" in tasks:
        out["extension"] = extension_probe(domain, h, fields + [pipe.tsc.w])
    return out


def _global_job(name: str, cfg: StudyConfig, cs) -> dict:
    if name == "smoothing":
        return {"monitor": smoothing_monitor([1.0 / n for n in cfg.n])}
    if name == "korn":
        return {"monitor": korn_monitor([1.0 / n for n in cfg.korn_n], cfg.spec, cfg.h_divisor)}
    if name == "muckenhoupt":
        return {"monitor": muckenhoupt_monitor(cfg.spec, [1.0 / n for n in cfg.muckenhoupt_n])}
    if name == "plateau":
        domain = build_macro_domain("unit_square", cfg.plateau_n, cfg.spec)
        data = data_preset(cfg.data, scale=cfg.scale, seed=cfg.seed)
        h = domain.epsilon / cfg.h_divisor
        coarse = run_pipeline(domain, cfg.coeff, cs, data, h, cfg.tau, method=cfg.method).report
        fine = run_pipeline(domain, cfg.coeff, cs, data, h / 2, cfg.tau, method=cfg.method).report
        return {"monitor": plateau_check(coarse, fine, cfg.functionals or tuple(FUNCTIONALS))}
    raise ValueError(name)


def _run_job(job, cfg, cs):
    kind = job[0]
    t0 = time.perf_counter()
    try:
        res = _eps_job(job[1], cfg, cs, job[2]) if kind == "eps" else _global_job(job[1], cfg, cs)
    except (SolverError, np.linalg.LinAlgError) as exc:
        res = {"error": f"{type(exc).__name__}: {exc}"}
    res["seconds"] = time.perf_counter() - t0
    return job, res


def _plan(cfg: StudyConfig) -> list:
    per_n = {}
    for n in cfg.n:
        if cfg.functionals:
            per_n.setdefault(n, set()).add("rates")
        for mon in ("quenched_cz", "extension"):
            if mon in cfg.monitors:
                per_n.setdefault(n, set()).add(mon)
    if "lipschitz" in cfg.monitors:
        for n in cfg.lipschitz_n:
            per_n.setdefault(n, set()).add("lipschitz")
    jobs = [("eps", n, tuple(sorted(t))) for n, t in sorted(per_n.items())]
    jobs += [("global", m) for m in ("smoothing", "korn", "muckenhoupt", "plateau") if m in cfg.monitors]
    return jobs


# ---------------------------------------------------------------------------
# reports

def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return repr(float(v))


def _clean(obj):
    """JSON-safe copy: NaN and infinities become ``None``."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _rate_rows(cfg: StudyConfig, reports: list[dict]) -> list[list[str]]:
    rows = []
    for rep in sorted(reports, key=lambda r: -r["epsilon"]):
        for name in cfg.functionals:
            r = dict(rep)
            tau = cfg.tau
            if name == "l4":
                tau, r["lp_err_tau"] = 0.0, rep["l4_err"]
            elif name == "sqfn":
                tau = cfg.sqfn_tau
            rows.append([name, _fmt(tau)] + [_fmt(r[c]) for c in ErrorReport.CSV_COLUMNS])
    return rows


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _theory(cfg: StudyConfig, name: str) -> float:
    tau = cfg.sqfn_tau if name == "sqfn" else cfg.tau
    return FUNCTIONALS[name][1](tau)


def run_study(cfg: StudyConfig, out_dir=None, cache_dir=None, workers: int | None = None) -> dict:
    """Execute a config; returns the summary (also written to ``summary.json``)."""
    out = Path(out_dir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    cache = cache_dir if cache_dir is not None else os.environ.get("PERFHOM_CACHE", cfg.cache)
    workers = workers or cfg.workers
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("perfhom")
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    try:
        return _run(cfg, out, cache, workers)
    finally:
        root.removeHandler(handler)
        handler.close()


def _run(cfg: StudyConfig, out: Path, cache, workers: int) -> dict:
    log.info("config %s", json.dumps(cfg.as_dict(), sort_keys=True))
    t0 = time.perf_counter()
    cs, hit = load_or_build(cache, cfg.spec, cfg.coeff, cfg.cell_h, cfg.method)
    log.info("cell problem %s in %.1f s", "loaded" if hit else "solved", time.perf_counter() - t0)
    jobs = _plan(cfg)
    results = {}
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for job, res in pool.map(_run_job, jobs, [cfg] * len(jobs), [cs] * len(jobs)):
                results[job] = res
    else:
        for job in jobs:
            results[job] = _run_job(job, cfg, cs)[1]
    failures = []
    for job in sorted(results, key=str):
        res = results[job]
        log.info("job %s finished in %.1f s", job, res["seconds"])
        if "error" in res:
            label = f"eps=1/{job[1]}" if job[0] == "eps" else job[1]
            failures.append({"job": label, "tasks": list(job[2]) if job[0] == "eps" else [job[1]],
                             "error": res["error"]})
            log.error("solver failure at %s: %s", label, res["error"])

    eps_results = {1.0 / job[1]: res for job, res in results.items() if job[0] == "eps" and "error" not in res}
    summary = {"config": cfg.as_dict(), "failures": failures}

    # rates
    reports = [r["report"] for r in eps_results.values() if "report" in r]
    rows = _rate_rows(cfg, reports)
    _write_csv(out / "rates.csv", RATE_COLUMNS, rows)
    finite = all(math.isfinite(float(v)) for row in rows for v in row[1:])
    rates = {}
    if cfg.functionals:
        objs = [ErrorReport(**{k: v for k, v in r.items()}) for r in reports]
        fits = run_rate_study(objs, cfg.functionals)
        for name, study in fits.items():
            thr = cfg.gates.get(name)
            applicable = len(cfg.n) >= 3
            ok = study.status == "ok" and study.fitted_slope >= thr
            if name == "h1":
                ok = ok and study.r2 >= cfg.h1_r2
            rates[name] = {"slope": study.fitted_slope, "r2": study.r2, "flagged": study.flagged,
                           "status": study.status, "theory": _theory(cfg, name), "threshold": thr,
                           "samples": study.samples, "gated": applicable,
                           "passed": bool(ok) if applicable else None}
    summary["rates"] = rates

    # monitors
    monitors, mon_rows = {}, []
    if "cell" in cfg.monitors:
        checks = cell_checks(cs)
        monitors["cell"] = {"checks": checks, "diagnostics": cs.diagnostics, "cache_hit": hit,
                            "A_hat": cs.A_hat.voigt().tolist(),
                            "passed": all(c["passed"] for c in checks.values())}
        for name, c in checks.items():
            mon_rows.append(("cell", name, 1.0, c["value"]))
    collected = {}
    for mon, agg in (("lipschitz", lipschitz_monitor), ("extension", extension_monitor)):
        probes = {e: r[mon] for e, r in eps_results.items() if mon in r}
        if mon in cfg.monitors and probes:
            collected[mon] = agg(probes)
    probes = {e: r["quenched_cz"] for e, r in eps_results.items() if "quenched_cz" in r}
    if "quenched_cz" in cfg.monitors and probes:
        collected["quenched_cz"] = cz_monitor(probes, cfg.coeff.mu0)
    for job, res in results.items():
        if job[0] == "global" and "monitor" in res:
            collected[job[1]] = res["monitor"]
    for name in MONITORS:
        if name in collected:
            rep = collected[name]
            monitors[name] = rep.summary()
            mon_rows.extend(rep.rows)
    for name in cfg.monitors:
        if name not in monitors:
            monitors[name] = {"passed": False, "missing": True}
    _write_csv(out / "monitors.csv", MONITOR_COLUMNS,
               [[m, c, _fmt(e), _fmt(v)] for m, c, e, v in mon_rows])
    summary["monitors"] = monitors
    summary["finite"] = finite
    gate_flags = [v["passed"] for v in rates.values() if v["passed"] is not None]
    gate_flags += [v["passed"] for v in monitors.values()]
    summary["passed"] = bool(finite and not failures and all(gate_flags))
    summary["seconds"] = time.perf_counter() - t0
    (out / "summary.json").write_text(json.dumps(_clean(summary), indent=2, sort_keys=True) + "\n")
    log.info("done in %.1f s, passed=%s", summary["seconds"], summary["passed"])
    return summary


def exit_code(summary: dict) -> int:
    if summary["failures"]:
        return EXIT_SOLVER
    return EXIT_OK if summary["passed"] else EXIT_GATE


# ---------------------------------------------------------------------------
# entry point

def _print_summary(summary: dict) -> None:
    for name, r in summary["rates"].items():
        state = "n/a" if r["passed"] is None else ("PASS" if r["passed"] else "FAIL")
        print(f"rate {name:5s} slope={r['slope']:.3f} r2={r['r2']:.3f} "
              f"(>= {r['threshold']:.2f}, theory {r['theory']:.3f}) {state}")
    for name, m in summary["monitors"].items():
        print(f"monitor {name:12s} {'PASS' if m['passed'] else 'FAIL'}")
    for f in summary["failures"]:
        print(f"solver failure at {f['job']} ({', '.join(f['tasks'])}): {f['error']}", file=sys.stderr)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perfhom", description="Homogenization error studies on perforated squares.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the studies and monitors of a config")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides output.dir)")
    run.add_argument("--cache", help="cache directory (overrides output.cache and PERFHOM_CACHE)")
    run.add_argument("--workers", type=int, help="worker processes")
    run.add_argument("--only", help="run a single functional or monitor")
    chk = sub.add_parser("check-cell", help="validate the cell problem only")
    chk.add_argument("config")
    chk.add_argument("--out")
    chk.add_argument("--cache")
    return p


def _config_error(path, exc: ConfigError) -> int:
    where = f"{path}:{exc.line}" if exc.line else str(path)
    print(f"error: {where}: {exc}", file=sys.stderr)
    return EXIT_CONFIG


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        print(f"error: config file {args.config} not found", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        return _config_error(args.config, exc)
    if args.command == "check-cell":
        cfg = replace(cfg, functionals=(), monitors=("cell",))
        summary = run_study(cfg, args.out, args.cache)
        for name, c in summary["monitors"]["cell"]["checks"].items():
            print(f"{name:24s} {c['value']:.3e} {c['relation']} {c['limit']:.1e} {'PASS' if c['passed'] else 'FAIL'}")
        return exit_code(summary)
    if args.workers is not None and args.workers < 1:
        return _config_error(args.config, ConfigError("--workers", "must be >= 1"))
    if args.only:
        if args.only in FUNCTIONALS:
            cfg = replace(cfg, functionals=(args.only,), monitors=())
        elif args.only in MONITORS:
            cfg = replace(cfg, functionals=(), monitors=(args.only,))
        else:
            return _config_error(args.config, ConfigError("--only", f"unknown study {args.only!r}"))
    summary = run_study(cfg, args.out, args.cache, args.workers)
    _print_summary(summary)
    return exit_code(summary)


if __name__ == "__main__":
    sys.exit(main())
