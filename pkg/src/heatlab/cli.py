"""Command line entry point.

Exit status: 0 success, 1 a verification check failed (its report is still
written), 2 invalid input or configuration, 3 resource budget exceeded.
"""
from __future__ import annotations

import argparse
import contextvars
import json
import logging
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io as hio
from .adjoint import build_M, constant_adjoint
from .environment import EnvironmentSpec, InvalidEnvironment, SpecError, build, generate, validate
from .kernel import ResourceLimitError, budget, kernel_row, killed_kernel
from .lattice import Ball, Cylinder, Domain
from .montecarlo import sample_exit, sample_paths
from .potential import green_row
from .report import EstimateReport, merge_reports
from .verify import ESTIMATES, NEEDS_M, run_estimate

EXIT_OK, EXIT_FAILED, EXIT_INVALID, EXIT_BUDGET = 0, 1, 2, 3

log = logging.getLogger("heatlab")


class ConfigError(ValueError):
    pass


# -- helpers -----------------------------------------------------------------------


def parse_bytes(text: str) -> int:
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*([KMGT]?)i?B?\s*", str(text), re.IGNORECASE)
    if not m:
        raise ConfigError(f"cannot read memory size {text!r}")
    scale = {"": 1, "K": 2**10, "M": 2**20, "G": 2**30, "T": 2**40}[m.group(2).upper()]
    return int(float(m.group(1)) * scale)


def parse_point(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        return tuple(int(v) for v in str(text).split(","))
    except ValueError as exc:
        raise ConfigError(f"cannot read lattice point {text!r}") from exc


def parse_count(text) -> int:
    v = float(text)
    if v != int(v) or v < 1:
        raise ConfigError(f"expected a positive integer, got {text!r}")
    return int(v)


def load_env(source, seed=None, check=True):
    """Environment from a JSON file path or an inline spec dict."""
    if isinstance(source, dict):
        spec = EnvironmentSpec.from_dict(source)
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"environment file {source} does not exist")
        spec = EnvironmentSpec.load(path)
    if seed is not None:
        spec.seed = int(seed)
    return generate(spec) if check else build(spec)


def write_field(path, box, values, name="value"):
    path = Path(path)
    if path.suffix in (".bin", ".hlab"):
        hio.write_field(path, box, values)
    elif path.suffix == ".json":
        hio.write_json(path, {"lo": list(box.lo), "hi": list(box.hi), name: np.asarray(values).tolist()})
    else:
        hio.atomic_write(path, hio.field_csv(box, values, name))


def emit(text: str, out):
    if out:
        hio.atomic_write(out, text)
    else:
        sys.stdout.write(text)


def get_adjoint(env, adjoint=None, window=16, tol=1e-8, l_max=10):
    if adjoint:
        return hio.load_adjoint(adjoint)
    if env.is_translation_invariant:
        return constant_adjoint(env, window)
    return build_M(env, window=window, tol=tol, l_max=l_max)


def report_text(reports: list[EstimateReport]) -> str:
    if len(reports) == 1:
        return reports[0].dumps()
    return json.dumps(hio_clean(merge_reports(reports)), sort_keys=True, indent=1) + "\n"


def hio_clean(obj):
    from .report import _clean

    return _clean(obj)


# -- run configs ---------------------------------------------------------------------


@dataclass
class RunConfig:
    """Everything a run depends on; a run is a pure function of this."""

    env: object
    output: str = "heatlab-out"
    verify: list = field(default_factory=list)
    adjoint: dict | None = None
    kernels: list = field(default_factory=list)
    jobs: int = 1
    seed: int | None = None
    budget_mem: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        if not isinstance(data, dict):
            raise ConfigError("run config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "env" not in data:
            raise ConfigError("run config needs 'env'")
        cfg = cls(**data)
        for i, item in enumerate(cfg.verify):
            if not isinstance(item, dict) or item.get("estimate") not in ESTIMATES:
                raise ConfigError(f"verify[{i}]: unknown or missing estimate")
            if not isinstance(item.get("params", {}), dict):
                raise ConfigError(f"verify[{i}]: params must be an object")
        if int(cfg.jobs) < 1:
            raise ConfigError("jobs must be >= 1")
        return cfg

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        except FileNotFoundError as exc:
            raise ConfigError(f"{path}: no such file") from exc

    def to_dict(self) -> dict:
        return asdict(self)


def run(config: RunConfig) -> int:
    """Execute a run config; artifacts go to ``config.output``."""
    start = time.time()
    out = Path(config.output)
    env = load_env(config.env, config.seed)
    artifacts = {}
    M = None
    needs_M = any(item["estimate"] in NEEDS_M or (item["estimate"] == "harnack" and item.get("params", {}).get("kind") == "adjoint")
                  for item in config.verify)
    if config.adjoint is not None or needs_M:
        opts = dict(config.adjoint or {})
        M = get_adjoint(env, opts.get("file"), opts.get("window", 16), opts.get("tol", 1e-8), opts.get("l_max", 10))
        for p in hio.save_adjoint(out / "adjoint.csv", M):
            artifacts[p.name] = str(p)
    for i, item in enumerate(config.kernels):
        x, n = parse_point(item["x"]), int(item["n"])
        field_ = kernel_row(env, x, n, trim_tol=float(item.get("trim_tol", 0.0)))
        p = out / item.get("file", f"kernel_{i}.bin")
        write_field(p, field_.box, field_.values, "p")
        artifacts[p.name] = str(p)

    def task(item):
        return run_estimate(item["estimate"], env, M, **item.get("params", {}))

    # worker threads do not inherit context variables such as the memory budget
    contexts = [contextvars.copy_context() for _ in config.verify]
    with ThreadPoolExecutor(max_workers=int(config.jobs)) as pool:
        results = list(pool.map(lambda pair: pair[0].run(task, pair[1]), zip(contexts, config.verify)))
    reports = [r for group in results for r in group]
    for i, (item, group) in enumerate(zip(config.verify, results)):
        name = item.get("name", f"{i:02d}_{item['estimate']}")
        p = out / f"{name}.json"
        hio.atomic_write(p, report_text(group))
        artifacts[p.name] = str(p)
    status = EXIT_OK if all(r.passed for r in reports) else EXIT_FAILED
    if reports:
        p = out / "report.json"
        hio.write_json(p, hio_clean(merge_reports(reports)))
        artifacts[p.name] = str(p)
    man = hio.manifest(config.to_dict(), artifacts, time.time() - start, status)
    man["finished_utc"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    hio.write_json(out / "manifest.json", man)
    return status


# -- subcommands ---------------------------------------------------------------------


def cmd_env_validate(a) -> int:
    spec = EnvironmentSpec.load(a.file) if Path(a.file).exists() else None
    if spec is None:
        raise ConfigError(f"{a.file}: no such file")
    env = build(spec)
    bad = validate(env)
    if bad:
        for v in bad:
            print(str(v), file=sys.stderr)
        print(json.dumps({"valid": False, "violations": len(bad)}))
        return EXIT_INVALID
    print(json.dumps({"valid": True, "fingerprint": env.fingerprint(), "classes": env.n_classes}))
    return EXIT_OK


def cmd_env_generate(a) -> int:
    env = load_env(a.file, a.seed)
    emit(env.to_spec().dumps() + "\n", a.output)
    return EXIT_OK


def cmd_kernel_row(a) -> int:
    env = load_env(a.env)
    x = parse_point(a.x)
    if a.radius is not None:
        centre = parse_point(a.center) if a.center else (0,) * env.dimension
        field_ = killed_kernel(env, Ball(centre, a.radius), x, a.n)
    else:
        field_ = kernel_row(env, x, a.n, trim_tol=a.trim)
    summary = {"x": list(x), "n": a.n, "mass": field_.total(), "escaped": field_.escaped, "dropped": field_.dropped,
               "lo": list(field_.box.lo), "hi": list(field_.box.hi)}
    if a.output:
        write_field(a.output, field_.box, field_.values, "p")
    print(json.dumps(summary))
    return EXIT_OK


def cmd_green_row(a) -> int:
    env = load_env(a.env)
    centre = parse_point(a.center) if a.center else (0,) * env.dimension
    x = parse_point(a.x) if a.x else centre
    table = green_row(env, Ball(centre, a.radius), x, a.method)
    if a.output:
        write_field(a.output, table.field.box, table.field.values, "G")
    print(json.dumps(hio_clean(table.summary())))
    return EXIT_OK


def cmd_adjoint_build(a) -> int:
    env = load_env(a.env)
    M = get_adjoint(env, None, a.window, a.tol, a.l_max) if a.exact_constant else build_M(
        env, window=a.window, tol=a.tol, l_max=a.l_max)
    out = a.output or "adjoint.csv"
    hio.save_adjoint(out, M)
    print(json.dumps(hio_clean({k: v for k, v in M.metadata().items() if k != "history"})))
    return EXIT_OK


def cmd_verify(a) -> int:
    env = load_env(a.env)
    params = {}
    if a.grid:
        g = Path(a.grid)
        try:
            params = json.loads(g.read_text()) if g.exists() else json.loads(a.grid)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--grid is neither a JSON file nor JSON text ({exc})") from exc
        if not isinstance(params, dict):
            raise ConfigError("--grid must be a JSON object")
    if a.estimate not in ESTIMATES:
        raise ConfigError(f"unknown estimate {a.estimate!r}; known: {', '.join(sorted(ESTIMATES))}")
    M = None
    if a.estimate in NEEDS_M or params.get("kind") == "adjoint" or a.adjoint:
        M = get_adjoint(env, a.adjoint, a.window, a.tol, a.l_max)
    try:
        reports = run_estimate(a.estimate, env, M, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {a.estimate}: {exc}") from exc
    emit(report_text(reports), a.output)
    if a.csv:
        hio.atomic_write(a.csv, hio.rows_csv([dict(row, estimate=r.estimate) for r in reports
                                              for row in hio_clean(r.rows) if isinstance(row, dict)]))
    for r in reports:
        print(f"{r.estimate}: {'pass' if r.passed else 'FAIL'}", file=sys.stderr)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAILED


def cmd_mc_kernel(a) -> int:
    env = load_env(a.env)
    field_ = sample_paths(env, parse_point(a.x), a.n, parse_count(a.paths), a.seed, a.stream, a.jobs)
    emit(hio.field_csv(field_.box, field_.values, "frequency", skip_zero=True), a.output)
    return EXIT_OK


def cmd_mc_exit(a) -> int:
    env = load_env(a.env)
    centre = parse_point(a.center) if a.center else (0,) * env.dimension
    dom = Domain.from_ball(Ball(centre, a.radius), env.gamma.reach_int)
    cyl = Cylinder(dom, 0, a.height)
    x = parse_point(a.x) if a.x else centre
    freq, _ = sample_exit(env, cyl, x, a.t0 if a.t0 is not None else a.height, parse_count(a.paths), a.seed,
                          a.stream, a.jobs)
    lines = ["k," + ",".join(f"x{i + 1}" for i in range(env.dimension)) + ",frequency"]
    for idx in np.argwhere(freq > 0):
        k = int(idx[0]) + cyl.a
        pt = [int(v) for v in idx[1:] + np.asarray(dom.box.lo)]
        lines.append(",".join(map(str, [k] + pt)) + f",{float(freq[tuple(idx)])!r}")
    emit("\n".join(lines) + "\n", a.output)
    return EXIT_OK


def cmd_report_merge(a) -> int:
    reports = []
    for f in a.files:
        doc = hio.read_json(f)
        items = doc["reports"] if "reports" in doc else [doc]
        reports.extend(EstimateReport.from_dict(d) for d in items)
    emit(json.dumps(hio_clean(merge_reports(reports)), sort_keys=True, indent=1) + "\n", a.output)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAILED


def cmd_run(a) -> int:
    cfg = RunConfig.load(a.config)
    base = Path(a.config).resolve().parent
    # relative input paths are read relative to the config file
    if isinstance(cfg.env, str) and not Path(cfg.env).is_absolute() and (base / cfg.env).exists():
        cfg.env = str(base / cfg.env)
    if a.output:
        cfg.output = a.output
    if a.jobs is not None:
        cfg.jobs = a.jobs
    if a.seed is not None:
        cfg.seed = a.seed
    if cfg.budget_mem and a.budget_mem is None:
        with budget(parse_bytes(cfg.budget_mem)):
            return run(cfg)
    return run(cfg)


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--jobs", type=int, default=None, help="worker threads")
    common.add_argument("--budget-mem", default=None, help="memory budget such as 512M or 2G")
    common.add_argument("-o", "--output", default=None, help="output file (directory for run)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="heatlab", description="Random walks in elliptic environments.")
    sub = p.add_subparsers(dest="command", required=True)

    env = sub.add_parser("env", help="environment files").add_subparsers(dest="action", required=True)
    e = env.add_parser("validate", parents=[common])
    e.add_argument("file")
    e.set_defaults(fn=cmd_env_validate)
    e = env.add_parser("generate", parents=[common])
    e.add_argument("file")
    e.set_defaults(fn=cmd_env_generate)

    k = sub.add_parser("kernel").add_subparsers(dest="action", required=True)
    e = k.add_parser("row", parents=[common])
    e.add_argument("--env", required=True)
    e.add_argument("--x", default=None)
    e.add_argument("--n", type=int, required=True)
    e.add_argument("--radius", type=float, default=None, help="kill outside this ball")
    e.add_argument("--center", default=None)
    e.add_argument("--trim", type=float, default=0.0)
    e.set_defaults(fn=cmd_kernel_row)

    g = sub.add_parser("green").add_subparsers(dest="action", required=True)
    e = g.add_parser("row", parents=[common])
    e.add_argument("--env", required=True)
    e.add_argument("--radius", type=float, required=True)
    e.add_argument("--center", default=None)
    e.add_argument("--x", default=None)
    e.add_argument("--method", choices=("auto", "lu", "series"), default="auto")
    e.set_defaults(fn=cmd_green_row)

    ad = sub.add_parser("adjoint").add_subparsers(dest="action", required=True)
    e = ad.add_parser("build", parents=[common])
    e.add_argument("env_file", nargs="?", default=None)
    e.add_argument("--env", default=None)
    e.add_argument("--window", type=int, default=16)
    e.add_argument("--tol", type=float, default=1e-8)
    e.add_argument("--l-max", type=int, default=10)
    e.add_argument("--exact-constant", action="store_true", help="use M = 1 for translation-invariant walks")
    e.set_defaults(fn=cmd_adjoint_build)

    v = sub.add_parser("verify", parents=[common], help="run an empirical check")
    v.add_argument("estimate", help=", ".join(sorted(ESTIMATES)))
    v.add_argument("--env", required=True)
    v.add_argument("--adjoint", default=None, help="CSV written by 'adjoint build'")
    v.add_argument("--grid", default=None, help="JSON object (file or text) of check parameters")
    v.add_argument("--window", type=int, default=16)
    v.add_argument("--tol", type=float, default=1e-8)
    v.add_argument("--l-max", type=int, default=10)
    v.add_argument("--csv", default=None, help="also write the raw rows as CSV")
    v.set_defaults(fn=cmd_verify)

    mc = sub.add_parser("mc").add_subparsers(dest="action", required=True)
    e = mc.add_parser("kernel", parents=[common])
    e.add_argument("--env", required=True)
    e.add_argument("--x", default=None)
    e.add_argument("--n", type=int, required=True)
    e.add_argument("--paths", default="1e6")
    e.add_argument("--stream", type=int, default=0)
    e.set_defaults(fn=cmd_mc_kernel)
    e = mc.add_parser("exit", parents=[common])
    e.add_argument("--env", required=True)
    e.add_argument("--radius", type=float, required=True)
    e.add_argument("--height", type=int, required=True)
    e.add_argument("--center", default=None)
    e.add_argument("--x", default=None)
    e.add_argument("--t0", type=int, default=None)
    e.add_argument("--paths", default="1e6")
    e.add_argument("--stream", type=int, default=0)
    e.set_defaults(fn=cmd_mc_exit)

    r = sub.add_parser("report").add_subparsers(dest="action", required=True)
    e = r.add_parser("merge", parents=[common])
    e.add_argument("files", nargs="+")
    e.set_defaults(fn=cmd_report_merge)

    e = sub.add_parser("run", parents=[common], help="execute a JSON run config")
    e.add_argument("config")
    e.set_defaults(fn=cmd_run)
    return p


def _defaults(a):
    if getattr(a, "fn", None) is cmd_adjoint_build:
        a.env = a.env or a.env_file
        if not a.env:
            raise ConfigError("adjoint build needs an environment file")
    if a.fn in (cmd_mc_kernel, cmd_mc_exit):
        a.seed = 0 if a.seed is None else a.seed
        a.jobs = 1 if a.jobs is None else a.jobs


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        _defaults(a)
        if a.fn in (cmd_kernel_row, cmd_mc_kernel) and a.x is None:
            a.x = ",".join(["0"] * load_env(a.env).dimension)
        if a.budget_mem is not None:
            with budget(parse_bytes(a.budget_mem)):
                return a.fn(a)
        return a.fn(a)
    except ResourceLimitError as exc:
        print(f"heatlab: resource budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except MemoryError:
        print("heatlab: out of memory", file=sys.stderr)
        return EXIT_BUDGET
    except InvalidEnvironment as exc:
        for v in exc.violations:
            print(str(v), file=sys.stderr)
        print(f"heatlab: invalid environment ({len(exc.violations)} violations)", file=sys.stderr)
        return EXIT_INVALID
    except (SpecError, ConfigError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"heatlab: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
