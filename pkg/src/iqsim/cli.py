"""Command-line front end.

    iqsim <experiment> [--config run.yaml] [--output DIR] [--seed N] [--<param> VALUE ...]
    iqsim run --config run.yaml

A config file looks like::

    experiment: dwave
    seed: 0
    output: results/dwave
    format: csv            # csv | json | both (how tables are written)
    params:
      lambda: 2.0
      depth: 5

Flags override file values. Parameter flag values are parsed as YAML
scalars or lists (``--depths "[1, 3, 5]"``). Everything is validated
before any computation starts.

Exit status: 0 ok, 2 config error, 3 numerical failure, 4 resource cap.
Failures print one JSON object on stderr and, when possible, write it to
``error.json`` in the output directory.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .errors import ConfigInvalid, DimensionCap, ExperimentFailed, IqsError
from .experiments import DEFAULTS, RUNNERS, ExperimentOutput
from .kernels import BACKEND

log = logging.getLogger("iqsim")

TOP_KEYS = ("experiment", "seed", "output", "format", "params")
FORMATS = ("csv", "json", "both")

_POSITIVE = {
    "rungs", "depth", "starts", "runs", "points", "repeats", "n_sites", "n_grid", "m_max",
    "max_iters", "max_iter", "shots_per_eval", "temperature", "step", "delta", "steps_per_unit",
    "workers", "fidelity_starts", "coefficient_cap", "delta0", "beta_decay", "tol",
}
_NONNEGATIVE = {"budget", "kappa", "lambda0", "fidelity_sites", "n_up", "n_down", "scan_step"}
_CHOICES = {"variant": ("overlap", "l2", "peak", "momentum_sum")}


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


def _kind(default):
    if isinstance(default, bool):
        return "bool"
    if isinstance(default, int):
        return "int"
    if isinstance(default, float):
        return "float"
    if isinstance(default, str):
        return "str"
    return "list"


def _coerce_scalar(value, kind):
    if kind == "bool":
        if isinstance(value, bool):
            return value
        raise TypeError("expected true or false")
    if isinstance(value, bool):
        raise TypeError(f"expected {kind}, got a boolean")
    if kind == "int":
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise TypeError("expected an integer")
    if kind == "float":
        if isinstance(value, (int, float)) and math.isfinite(value):
            return float(value)
        raise TypeError("expected a finite number")
    if isinstance(value, str):
        return value
    raise TypeError("expected a string")


def _coerce(key, value, default):
    kind = _kind(default)
    if kind != "list":
        out = _coerce_scalar(value, kind)
    else:
        if not isinstance(value, (list, tuple)) or not value:
            raise TypeError("expected a non-empty list")
        inner = "float" if any(isinstance(d, float) for d in default) else _kind(default[0])
        out = [_coerce_scalar(v, inner) for v in value]
    values = out if isinstance(out, list) else [out]
    if key in _POSITIVE and any(v <= 0 for v in values):
        raise ValueError("must be positive")
    if key in _NONNEGATIVE and any(v < 0 for v in values):
        raise ValueError("must be non-negative")
    if key in _CHOICES and out not in _CHOICES[key]:
        raise ValueError(f"must be one of {', '.join(_CHOICES[key])}")
    return out


def validate(raw) -> dict:
    """Resolved config with defaults filled in, or ConfigInvalid listing every bad field."""
    if raw is None or (isinstance(raw, dict) and not raw):
        raise ConfigInvalid("configuration is empty", {"experiment": f"required; one of {', '.join(RUNNERS)}"})
    if not isinstance(raw, dict):
        raise ConfigInvalid("configuration must be a mapping", {"<root>": f"got {type(raw).__name__}"})
    errors = {}
    for key in raw:
        if key not in TOP_KEYS:
            errors[str(key)] = "unknown key"
    exp = raw.get("experiment")
    if exp is None:
        errors["experiment"] = f"required; one of {', '.join(RUNNERS)}"
    elif exp not in RUNNERS:
        errors["experiment"] = f"unknown experiment {exp!r}; one of {', '.join(RUNNERS)}"
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errors["seed"] = "must be a non-negative integer"
    fmt = raw.get("format", "csv")
    if fmt not in FORMATS:
        errors["format"] = f"must be one of {', '.join(FORMATS)}"
    output = raw.get("output", None)
    if output is not None and not isinstance(output, str):
        errors["output"] = "must be a path string"
    params = raw.get("params") or {}
    if not isinstance(params, dict):
        errors["params"] = "must be a mapping"
        params = {}
    resolved = {}
    if exp in RUNNERS:
        defaults = DEFAULTS[exp]
        for key, value in params.items():
            if key not in defaults:
                errors[f"params.{key}"] = "unknown key"
                continue
            try:
                resolved[key] = _coerce(key, value, defaults[key])
            except (TypeError, ValueError) as exc:
                errors[f"params.{key}"] = str(exc)
        resolved = {**defaults, **resolved}
        if exp in ("shl-fm", "shl-afm") and "x0" not in errors and len(resolved["x0"]) != 2:
            errors["params.x0"] = "expected two values (B_z, J)"
    if errors:
        raise ConfigInvalid("invalid configuration", errors)
    return {
        "experiment": exp,
        "seed": int(seed),
        "output": output or f"results/{exp}",
        "format": fmt,
        "params": resolved,
    }


def config_hash(config: dict) -> str:
    payload = {k: config[k] for k in ("experiment", "seed", "params")}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else None
    return x


def _dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _csv_text(table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def emit_plotdata(output: ExperimentOutput, directory: Path, fmt: str = "csv") -> dict:
    """Write the summary and tables; returns {file name: sha256}."""
    directory.mkdir(parents=True, exist_ok=True)
    files = {"results.json": _dump_json(output.summary)}
    for name, table in output.tables.items():
        if fmt in ("csv", "both"):
            files[f"{name}.csv"] = _csv_text(table)
        if fmt in ("json", "both"):
            files[f"{name}.json"] = _dump_json({"columns": list(table.columns), "rows": table.rows})
    digests = {}
    for fname, text in files.items():
        (directory / fname).write_text(text)
        digests[fname] = hashlib.sha256(text.encode()).hexdigest()
    return digests


def versions() -> dict:
    return {
        "iqsim": __version__,
        "backend": BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pyyaml": yaml.__version__,
    }


def run(config: dict) -> Path:
    """Run one validated config; writes results plus manifest.json and returns the output directory."""
    out_dir = Path(config["output"])
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    log.info("running %s (seed %d) into %s", config["experiment"], config["seed"], out_dir)
    try:
        result = RUNNERS[config["experiment"]](config["params"], config["seed"])
    except IqsError:
        raise
    except (np.linalg.LinAlgError, ArithmeticError, ValueError) as exc:
        raise ExperimentFailed(f"{type(exc).__name__}: {exc}") from exc
    wall = time.perf_counter() - t0
    digests = emit_plotdata(result, out_dir, config["format"])
    manifest = {
        "experiment": config["experiment"],
        "config": config,
        "config_hash": config_hash(config),
        "seed": config["seed"],
        "versions": versions(),
        "started_at": started,
        "wall_time_seconds": wall,
        "files": digests,
    }
    (out_dir / "manifest.json").write_text(_dump_json(manifest))
    log.info("done in %.1f s", wall)
    return out_dir


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iqsim", description="Desk-scale inverse quantum simulation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--output", help="output directory")
        p.add_argument("--seed", help="top-level seed")
        p.add_argument("--format", help="table format: csv, json or both")

    common(sub.add_parser("run", help="run the experiment named in --config"))
    for name, defaults in DEFAULTS.items():
        p = sub.add_parser(name, help=f"{name} experiment")
        common(p)
        group = p.add_argument_group("parameters")
        for key, default in defaults.items():
            flags = dict.fromkeys([_flag(key), _flag(key).lower()])
            group.add_argument(*flags, dest=f"param:{key}", metavar="VALUE",
                               help=f"default: {json.dumps(default)}")
    return parser


def _parse_value(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def resolve(args: argparse.Namespace) -> dict:
    raw: dict = {}
    if args.config:
        path = Path(args.config)
        try:
            loaded = yaml.safe_load(path.read_text())
        except OSError as exc:
            raise ConfigInvalid(f"cannot read config: {exc}", {"config": str(exc)}) from exc
        except yaml.YAMLError as exc:
            raise ConfigInvalid(f"config is not valid YAML: {exc}", {"config": "parse error"}) from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigInvalid("configuration must be a mapping", {"<root>": f"got {type(loaded).__name__}"})
        raw = dict(loaded or {})
    if args.command != "run":
        if raw.get("experiment", args.command) != args.command:
            raise ConfigInvalid("config names a different experiment",
                                {"experiment": f"{raw['experiment']!r} in file, {args.command!r} on the command line"})
        raw["experiment"] = args.command
    for key in ("output", "format"):
        if getattr(args, key) is not None:
            raw[key] = getattr(args, key)
    if args.seed is not None:
        raw["seed"] = _parse_value(args.seed)
    overrides = {k.split(":", 1)[1]: _parse_value(v) for k, v in vars(args).items()
                 if k.startswith("param:") and v is not None}
    if overrides:
        params = raw.get("params") or {}
        if isinstance(params, dict):
            raw["params"] = {**params, **overrides}
    return validate(raw)


def _fail(exc: IqsError, output: str | None) -> int:
    code = getattr(exc, "exit_code", 3)
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, ConfigInvalid):
        payload["fields"] = exc.fields
    text = json.dumps(payload, sort_keys=True)
    print(text, file=sys.stderr)
    if output:
        try:
            Path(output).mkdir(parents=True, exist_ok=True)
            (Path(output) / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    output = args.output
    try:
        config = resolve(args)
        output = config["output"]
        run(config)
    except IqsError as exc:
        return _fail(exc, output)
    except MemoryError as exc:
        return _fail(DimensionCap(f"out of memory: {exc}"), output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
