"""File formats, run configuration and manifests.

Every structured file is JSON with a ``format`` tag. Matrices use the project
layout ``{"rows", "cols", "entries": [[re, im], ...]}`` in row-major order.
Output is written with sorted keys and ``repr`` floats so identical runs give
identical bytes.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io as _io
import json
import os
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .code_search import CodeBasis
from .control import ControlPair, Pulse
from .quantum_core import HermitianOperator, ValidationError, matrix_from_dict, matrix_to_dict

SCHEMA_VERSION = 1


class ConfigError(ValidationError):
    """Configuration or input file rejected (schema or consistency)."""


# ---------------------------------------------------------------- primitives

def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))
    return path


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")


def _expect_format(d: dict, fmt: str, path="") -> dict:
    if not isinstance(d, dict) or d.get("format") != fmt:
        got = d.get("format") if isinstance(d, dict) else type(d).__name__
        raise ConfigError(f"{path or 'input'}: expected format {fmt!r}, found {got!r}")
    return d


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = _io.StringIO()
    w = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    return path


def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- artifacts

def matrix_file(a) -> dict:
    return {"format": "matrix", **matrix_to_dict(a)}


def load_matrix(path) -> np.ndarray:
    d = _expect_format(read_json(path), "matrix", path)
    return matrix_from_dict(d)


def error_set_to_dict(errors) -> dict:
    ops = []
    for k, e in enumerate(errors):
        m = e.matrix if isinstance(e, HermitianOperator) else np.asarray(e)
        ops.append({"label": getattr(e, "label", "") or f"E{k}", "matrix": matrix_to_dict(m)})
    return {"format": "error_set", "operators": ops}


def error_set_from_dict(d: dict, path="") -> list[HermitianOperator]:
    _expect_format(d, "error_set", path)
    ops = [HermitianOperator(matrix_from_dict(o["matrix"]), o.get("label", "")) for o in d["operators"]]
    dims = {o.dim for o in ops}
    if len(dims) > 1:
        raise ConfigError(f"{path or 'error_set'}: operators differ in dimension {sorted(dims)}")
    return ops


def code_basis_to_dict(basis: CodeBasis | np.ndarray, kind: str = "code_basis") -> dict:
    G = basis.codewords if isinstance(basis, CodeBasis) else np.atleast_2d(basis)
    res = basis.residuals if isinstance(basis, CodeBasis) else {}
    return {"format": kind, "N": int(G.shape[1]), "I": int(G.shape[0]),
            "codewords": matrix_to_dict(G), "residuals": _plain(res)}


def code_basis_from_dict(d: dict, path="") -> CodeBasis:
    if not isinstance(d, dict) or d.get("format") not in ("code_basis", "info_basis"):
        raise ConfigError(f"{path or 'input'}: expected format 'code_basis' or 'info_basis'")
    G = matrix_from_dict(d["codewords"])
    if G.shape != (d["I"], d["N"]):
        raise ConfigError(f"{path or 'code_basis'}: codewords shape {G.shape} does not match I={d['I']}, N={d['N']}")
    return CodeBasis(G, dict(d.get("residuals", {})))


def control_pair_to_dict(pair: ControlPair) -> dict:
    return {"format": "control_pair", "time_unit": pair.time_unit,
            "A": matrix_to_dict(pair.Ha.matrix), "B": matrix_to_dict(pair.Hb.matrix)}


def control_pair_from_dict(d: dict, path="") -> ControlPair:
    _expect_format(d, "control_pair", path)
    return ControlPair(matrix_from_dict(d["A"]), matrix_from_dict(d["B"]), d.get("time_unit", ""))


def schedule_to_dict(t, units: str = "ns") -> dict:
    pulses = [{"index": j + 1, "hamiltonian": "A" if j % 2 == 0 else "B", "duration": float(d)}
              for j, d in enumerate(np.ravel(t))]
    return {"format": "timing_schedule", "units": units, "alternation": "A-first", "pulses": pulses}


def schedule_from_dict(d: dict, path="") -> np.ndarray:
    _expect_format(d, "timing_schedule", path)
    pulses = sorted(d["pulses"], key=lambda p: p["index"])
    for j, p in enumerate(pulses):
        want = "A" if j % 2 == 0 else "B"
        if p["index"] != j + 1 or p["hamiltonian"] != want:
            raise ConfigError(f"{path or 'schedule'}: pulse {j + 1} must be index {j + 1} on {want}")
        if p["duration"] < 0:
            raise ConfigError(f"{path or 'schedule'}: pulse {j + 1} has negative duration")
    return np.array([p["duration"] for p in pulses], dtype=float)


def schedule_pulses(t) -> list[Pulse]:
    return [Pulse(p["hamiltonian"], 1, p["duration"]) for p in schedule_to_dict(t)["pulses"]]


def write_convergence(path, trace) -> Path:
    rows = [(r["step"], float(r["G"]), None if r["alpha"] is None else float(r["alpha"]),
             r["permutation"], int(bool(r["accepted"]))) for r in trace]
    return write_csv(path, ["step", "G", "alpha", "permutation", "accepted"], rows)


def write_fidelity_trace(path, trace) -> Path:
    """One row per completed cycle; the cycle-0 record (fidelity 1) is implicit."""
    return write_csv(path, ["cycle", "fidelity", "cum_success"], list(trace.rows())[1:])


def _plain(obj):
    """Convert numpy scalars and arrays into JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


plain = _plain


# ---------------------------------------------------------------- configuration

COMMANDS = ("find-code", "check-code", "solve-timings", "simulate", "rb78-pipeline")

TOLERANCE_PROFILES = {
    "default": {"target_residual": 1e-10, "target_G": 1e-8, "check_tol": 1e-8},
    "strict": {"target_residual": 1e-12, "target_G": 1e-10, "check_tol": 1e-10},
    "loose": {"target_residual": 1e-8, "target_G": 1e-6, "check_tol": 1e-6},
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_count = {"type": "integer", "minimum": 0}
_path = {"type": ["string", "null"]}

_signal = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["constant", "sinusoid", "filtered_noise"]},
        "amplitude": _num, "freq": _num, "phase": _num, "corr_time": _pos,
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "command"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "command": {"enum": list(COMMANDS)},
        "seed": {"type": "integer", "minimum": 0},
        "tolerance_profile": {"enum": list(TOLERANCE_PROFILES)},
        "inputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: _path for k in ("errors", "code", "info", "control_pair", "timings", "coder")},
        },
        "search": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "I": {"type": "integer", "minimum": 1},
                "max_iterations": {"type": "integer", "minimum": 1},
                "target_residual": _pos,
                "step_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "restart_limit": _count,
            },
        },
        "check": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tol": _pos},
        },
        "control": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delta_n": _count, "t_min": _pos, "t_max": _pos,
                "alpha_grid": {"type": "array", "minItems": 1,
                               "items": {"type": "number", "minimum": 0, "maximum": 1}},
                "target_G": _pos, "max_steps": _count, "step_fraction": _pos,
            },
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "T": _pos,
                "cycles": _count,
                "mode": {"enum": ["first_order", "exact_piecewise"]},
                "n_steps": {"type": "integer", "minimum": 1},
                "project": {"type": "boolean"},
                "density": {"type": "boolean"},
                "initial": {"type": ["array", "null"],
                            "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}},
                "amplitudes": {"type": ["array", "null"], "items": _num},
                "signals": {"type": ["array", "null"], "items": _signal},
                "T_list": {"type": ["array", "null"], "items": _pos},
                "total_time": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "metric": {"enum": ["failure", "infidelity"]},
            },
        },
        "pipeline": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "search_seeds": {"type": "array", "items": _count, "minItems": 1},
                "solve_timings": {"type": "boolean"},
                "raman_ratio": _pos,
            },
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "tolerance_profile": "default",
    "inputs": {k: None for k in ("errors", "code", "info", "control_pair", "timings", "coder")},
    "search": {"I": 2, "max_iterations": 100_000, "target_residual": None,
               "step_fraction": 0.5, "restart_limit": 10},
    "check": {"tol": None},
    "control": {"delta_n": 2, "t_min": 2.0, "t_max": 8.0,
                "alpha_grid": [1.0, 0.5, 0.25, 0.1, 0.05, 0.01],
                "target_G": None, "max_steps": 2000, "step_fraction": 0.5},
    "simulation": {"T": 1.0, "cycles": 100, "mode": "exact_piecewise", "n_steps": 64,
                   "project": True, "density": False, "initial": None, "amplitudes": None,
                   "signals": None, "T_list": None, "total_time": None, "metric": "failure"},
    "pipeline": {"search_seeds": list(range(10)), "solve_timings": True, "raman_ratio": 1.0},
}


def _format_path(err) -> str:
    return "/" + "/".join(str(p) for p in err.absolute_path)


def validate_config(cfg: dict) -> None:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        msgs = "; ".join(f"{_format_path(e)}: {e.message}" for e in errors)
        raise ConfigError(f"config rejected: {msgs}")


def fill_defaults(cfg: dict) -> dict:
    """Deep-merge ``cfg`` over :data:`DEFAULTS` and resolve tolerance-profile values."""
    out = copy.deepcopy(DEFAULTS)
    for k, v in cfg.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k].update(copy.deepcopy(v))
        else:
            out[k] = copy.deepcopy(v)
    prof = TOLERANCE_PROFILES[out["tolerance_profile"]]
    if out["search"]["target_residual"] is None:
        out["search"]["target_residual"] = prof["target_residual"]
    if out["control"]["target_G"] is None:
        out["control"]["target_G"] = prof["target_G"]
    if out["check"]["tol"] is None:
        out["check"]["tol"] = prof["check_tol"]
    return out


def _resolve_inputs(cfg: dict, base: Path | None) -> None:
    for k, v in cfg.get("inputs", {}).items():
        if v is not None and base is not None and not os.path.isabs(v):
            cfg["inputs"][k] = str((base / v).resolve())


def _input_dim(cfg: dict, key: str) -> int | None:
    path = cfg["inputs"].get(key)
    if path is None:
        return None
    d = read_json(path)
    fmt = d.get("format")
    if fmt == "error_set":
        return error_set_from_dict(d, path)[0].dim
    if fmt in ("code_basis", "info_basis"):
        return int(d["N"])
    if fmt == "control_pair":
        return int(d["A"]["rows"])
    if fmt == "matrix":
        return int(d["rows"])
    return None


def check_dimensions(cfg: dict) -> None:
    """Reject inputs whose state-space dimensions disagree, naming both fields."""
    dims = {}
    for key in ("errors", "code", "info", "control_pair", "coder"):
        try:
            n = _input_dim(cfg, key)
        except OSError as exc:
            raise
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"inputs.{key}: malformed file ({exc})")
        if n is None:
            continue
        for other, m in dims.items():
            if m != n:
                raise ConfigError(f"dimension mismatch: inputs.{key} has N={n} "
                                  f"but inputs.{other} has N={m}")
        dims[key] = n
    code, info = cfg["inputs"].get("code"), cfg["inputs"].get("info")
    if code and info:
        ic, ii = read_json(code)["I"], read_json(info)["I"]
        if ic != ii:
            raise ConfigError(f"dimension mismatch: inputs.code has I={ic} but inputs.info has I={ii}")


def prepare_config(raw: dict, base: Path | None = None, check_files: bool = True) -> dict:
    """Validate, fill defaults, resolve relative paths, and cross-check input dimensions."""
    validate_config(raw)
    cfg = fill_defaults(raw)
    _resolve_inputs(cfg, base)
    if cfg["control"]["t_max"] <= cfg["control"]["t_min"]:
        raise ConfigError("control.t_max must exceed control.t_min")
    if check_files:
        check_dimensions(cfg)
    return cfg


def parse_config(path) -> dict:
    path = Path(path)
    raw = read_json(path)
    return prepare_config(raw, path.parent.resolve())


# ---------------------------------------------------------------- manifest

def build_manifest(cfg: dict, outputs: dict, out_dir, deterministic: bool = True, status: str = "ok") -> dict:
    """Record the resolved configuration, input and output hashes.

    Output paths are stored relative to ``out_dir``. Without ``deterministic``
    a wall-clock timestamp is added.
    """
    out_dir = Path(out_dir)
    inputs = {}
    for k, v in sorted(cfg.get("inputs", {}).items()):
        if v is not None:
            inputs[k] = {"path": v, "sha256": sha256_file(v)}
    outs = {}
    for name, p in sorted(outputs.items()):
        p = Path(p)
        outs[name] = {"path": os.path.relpath(p, out_dir), "sha256": sha256_file(p)}
    man = {
        "format": "run_manifest",
        "tool": "zenocode",
        "version": __version__,
        "command": cfg["command"],
        "seed": cfg["seed"],
        "config": cfg,
        "inputs": inputs,
        "outputs": outs,
        "deterministic": bool(deterministic),
        "status": status,
    }
    if not deterministic:
        import datetime

        man["created"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    return man


def verify_manifest_inputs(man: dict) -> list[str]:
    """Names of inputs whose current hash differs from the recorded one."""
    bad = []
    for name, rec in man.get("inputs", {}).items():
        if not Path(rec["path"]).exists() or sha256_file(rec["path"]) != rec["sha256"]:
            bad.append(name)
    return bad
