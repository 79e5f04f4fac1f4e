"""Command line entry point: ``wmfield {field-study,cov-study,sample,validate}``.

Exit codes: 0 success, 2 configuration error, 3 validation failure,
4 numerical failure.  Output files are written to a temporary directory and
moved into place only after the whole run succeeded.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .errors import make_grid
from .exceptions import ConfigError, NumericalError
from .fem1d import eval_fe
from .fracop import split_beta
from .level import build_level
from .study import (COV_NORMS, DEFAULT_SEED, FIELD_NORMS, RATE_TOLERANCE, StudyConfig,
                    default_threads, draw_xi, run_cov_study, run_field_study, run_validation,
                    sample_field)

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3, 4

_INT_KEYS = {"n0", "n0_sup", "n_mc", "n_kl", "n_ok", "base_seed", "threads", "max_level"}
_FLOAT_KEYS = {"kappa"}
_LIST_KEYS = {"betas": float, "degrees": int, "norms": str, "fit_levels": int}


def fmt(x) -> str:
    """Shortest round-trip decimal for floats."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _parse_value(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _LIST_KEYS:
            conv = _LIST_KEYS[key]
            return tuple(conv(v.strip()) for v in raw.replace(",", " ").split() if v.strip())
    except ValueError as exc:
        raise ConfigError(f"invalid value {raw!r} for key {key!r}") from exc
    raise ConfigError(f"unknown config key {key!r}")


def read_config(path: str | os.PathLike) -> dict:
    """Flat ``key = value`` file; lists are comma or space separated."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} not found")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string("[study]\n" + path.read_text())
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config file: {exc}") from exc
    return {key: _parse_value(key, raw) for key, raw in parser["study"].items()}


def build_config(args, study: str) -> StudyConfig:
    values = read_config(args.config) if args.config else {}
    flags = {"betas": args.betas, "degrees": args.p, "norms": args.norms, "n_mc": args.n_mc,
             "max_level": args.max_level}
    for key, val in flags.items():
        if val is not None:
            values[key] = val
    env_seed = os.environ.get("WM_SEED")
    if env_seed is not None:
        values["base_seed"] = _parse_value("base_seed", env_seed)
    if args.seed is not None:
        values["base_seed"] = args.seed
    cap = default_threads() if "WM_THREADS" in os.environ else None
    threads = args.threads or values.get("threads") or cap or 1
    values["threads"] = min(threads, cap) if cap else threads
    max_level = values.pop("max_level", None)
    if max_level is not None:
        if max_level < 1:
            raise ConfigError("key 'max_level' must be >= 1")
        values["levels"] = tuple(range(max_level + 1))
        values.setdefault("fit_levels", tuple(range(max(0, max_level - 2), max_level + 1)))
    allowed = FIELD_NORMS if study == "field" else COV_NORMS
    for n in values.get("norms", ()):
        if n not in allowed:
            raise ConfigError(f"key 'norms': {n!r} is not one of {', '.join(allowed)}")
    for b in values.get("betas", ()):
        _check_beta(b)
    try:
        return StudyConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _check_beta(beta: float) -> None:
    if not 2 * beta > 0.5:
        raise ConfigError(
            f"beta={beta} violates the regularity threshold 2*beta > 1/2 "
            "(the field is not square integrable otherwise)")
    split_beta(beta)


class _Output:
    """Collects files in a temporary directory, then moves them to ``dest``."""

    def __init__(self, dest: Path):
        self.dest = dest
        self.files: list[str] = []

    def __enter__(self):
        self.dest.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".wm-", dir=self.dest))
        return self

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.tmp / name

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                for name in self.files:
                    os.replace(self.tmp / name, self.dest / name)
        finally:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _emit_study(study: str, cfg: StudyConfig, result, out: Path) -> list[str]:
    with _Output(out) as o:
        _write_csv(o.path(f"{study}_errors.csv"), ["beta", "p", "norm", "level", "h", "error"],
                   [(r.beta, r.p, r.norm, r.level, r.h, r.error) for r in result.records])
        rate_rows, summary = [], []
        for f in result.fits:
            within = f.within(RATE_TOLERANCE[f.norm])
            rate_rows.append((f.beta, f.p, f.norm, f.observed_rate,
                              "" if f.expected_rate is None else f.expected_rate,
                              "n/a" if within is None else str(within).lower()))
            exp = "--" if f.expected_rate is None else f"{f.expected_rate:.2f}"
            summary.append(f"{f.norm:8s} p={f.p} beta={f.beta:<4g} observed {f.observed_rate:5.2f}"
                           f"  expected {exp}")
        _write_csv(o.path(f"{study}_rates.csv"),
                   ["beta", "p", "norm", "observed_rate", "expected_rate", "within_tolerance"],
                   rate_rows)
        for f in result.fits:
            rows = [r for r in result.records if (r.beta, r.p, r.norm) == (f.beta, f.p, f.norm)]
            with open(o.path(f"{study}_{fmt(f.beta)}_{f.p}_{f.norm}.dat"), "w") as fh:
                for r in sorted(rows, key=lambda r: r.level):
                    fh.write(f"{fmt(float(np.log(r.h)))} {fmt(float(np.log(r.error)))}\n")
        with open(o.path(f"{study}_summary.txt"), "w") as fh:
            fh.write("\n".join(summary) + "\n")
        manifest = {
            "tool": "wmfield",
            "version": __version__,
            "study": study,
            "config": {k: v for k, v in dataclasses.asdict(cfg).items() if k != "threads"},
            "base_seed": cfg.base_seed,
            "files": [],
            "cell_seconds": [
                {"beta": k[0], "p": k[1], "norm": k[2], "level": k[3], "seconds": v}
                for k, v in result.timings.items()],
        }
        manifest_name = f"{study}_manifest.json"
        manifest["files"] = sorted(o.files + [manifest_name])
        with open(o.path(manifest_name), "w") as fh:
            json.dump(manifest, fh, indent=2)
    return [str(out / n) for n in manifest["files"]]


def cmd_field_study(args) -> int:
    cfg = build_config(args, "field")
    result = run_field_study(cfg)
    files = _emit_study("field", cfg, result, Path(args.out))
    print(f"wrote {len(files)} files to {args.out}")
    return EXIT_OK


def cmd_cov_study(args) -> int:
    cfg = build_config(args, "cov")
    result = run_cov_study(cfg)
    files = _emit_study("cov", cfg, result, Path(args.out))
    print(f"wrote {len(files)} files to {args.out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    _check_beta(args.beta)
    if args.level < 0:
        raise ConfigError("level must be >= 0")
    seed = args.seed if args.seed is not None else int(os.environ.get("WM_SEED", DEFAULT_SEED))
    disc = build_level(args.n0, args.level, args.p, args.kappa)
    xi = draw_xi(seed, 0, max(1000, disc.fe.n_dofs))
    coeffs = sample_field(disc, args.beta, xi[:, None])[:, 0]
    grid = make_grid(args.n_ok)
    values = eval_fe(disc.fe, coeffs, grid.nodes)
    out = Path(args.out)
    with _Output(out.parent if str(out.parent) else Path(".")) as o:
        with open(o.path(out.name), "w") as fh:
            for x, v in zip(grid.nodes, values):
                fh.write(f"{fmt(float(x))} {fmt(float(v))}\n")
        with open(o.path(out.stem + ".coeffs.txt"), "w") as fh:
            fh.write("".join(f"{fmt(float(c))}\n" for c in coeffs))
    print(f"wrote {out} ({disc.fe.n_dofs} coefficients)")
    return EXIT_OK


def cmd_validate(args) -> int:
    results = run_validation(quick=args.quick)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION


def _study_parser(sub, name, help_, norms):
    p = sub.add_parser(name, help=help_)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--p", type=int, nargs="+", choices=(1, 2), help="polynomial degrees")
    p.add_argument("--betas", type=float, nargs="+")
    p.add_argument("--norms", nargs="+", choices=norms)
    p.add_argument("--n-mc", type=int, dest="n_mc", help="Monte Carlo samples per cell")
    p.add_argument("--max-level", type=int, dest="max_level", help="finest refinement level")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    return p


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wmfield", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"wmfield {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    _study_parser(sub, "field-study", "Monte Carlo field error study", FIELD_NORMS).set_defaults(
        func=cmd_field_study)
    _study_parser(sub, "cov-study", "covariance error study", COV_NORMS).set_defaults(
        func=cmd_cov_study)
    s = sub.add_parser("sample", help="write one field realization")
    s.add_argument("--beta", type=float, required=True)
    s.add_argument("--level", type=int, default=0)
    s.add_argument("--p", type=int, choices=(1, 2), default=1)
    s.add_argument("--seed", type=int)
    s.add_argument("--n0", type=int, default=9)
    s.add_argument("--kappa", type=float, default=0.5)
    s.add_argument("--n-ok", type=int, dest="n_ok", default=1001)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)
    v = sub.add_parser("validate", help="run the discretization self-checks")
    v.add_argument("--quick", action="store_true", help="levels 0-2 only")
    v.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"wmfield: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"wmfield: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
