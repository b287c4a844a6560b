"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io, rb78, zeno
from .code_search import (
    SearchFailure,
    SearchParams,
    build_supermatrices,
    check_generalized_condition,
    condition_residuals,
    find_code,
    max_error_element,
)
from .control import ControlFailure, ControlSolveParams, propagator, schedule_propagator, decoding_sequence, solve_timings
from .quantum_core import ValidationError, coding_matrix, unitarity_error

logger = logging.getLogger("zenocode")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


class NumericalFailure(RuntimeError):
    """Raised after outputs are written when a stage did not converge."""


# ---------------------------------------------------------------- helpers

def _need(cfg, *keys):
    missing = [k for k in keys if not cfg["inputs"].get(k)]
    if missing:
        raise io.ConfigError(f"{cfg['command']} needs inputs: " + ", ".join(f"inputs.{k}" for k in missing))


def _errors(cfg):
    p = cfg["inputs"]["errors"]
    return io.error_set_from_dict(io.read_json(p), p)


def _basis(cfg, key):
    p = cfg["inputs"][key]
    return io.code_basis_from_dict(io.read_json(p), p)


def _search_params(cfg, seed=None) -> SearchParams:
    s = cfg["search"]
    return SearchParams(max_iterations=s["max_iterations"], target_residual=s["target_residual"],
                        step_fraction=s["step_fraction"], restart_limit=s["restart_limit"],
                        seed=cfg["seed"] if seed is None else seed)


def _control_params(cfg) -> ControlSolveParams:
    c = cfg["control"]
    return ControlSolveParams(delta_n=c["delta_n"], t_min=c["t_min"], t_max=c["t_max"],
                              alpha_grid=tuple(c["alpha_grid"]), target_G=c["target_G"],
                              max_steps=c["max_steps"], seed=cfg["seed"], step_fraction=c["step_fraction"])


def check_report(codewords, errors, tol: float) -> dict:
    """Residuals of the orthogonality conditions and the generalized-xi test."""
    G = np.atleast_2d(codewords)
    I = G.shape[0]
    S = build_supermatrices(errors, I)
    per_k, total = condition_residuals(G.ravel(), S)
    gen = check_generalized_condition(G, errors, tol)
    max_el = max_error_element(G, errors)
    per_error = []
    for m, e in enumerate(errors):
        per_error.append({"label": e.label, "xi": gen["xi"][m], "deviation": gen["deviation"][m],
                          "max_element": max_error_element(G, [e])})
    return {
        "format": "check_report",
        "N": int(G.shape[1]), "I": I, "tol": tol,
        "orthonormality": float(np.max(np.abs(G.conj() @ G.T - np.eye(I)))),
        "condition_total": float(total),
        "max_error_element": max_el,
        "orthogonal": bool(max_el < tol),
        "generalized_satisfied": bool(gen["satisfied"]),
        "max_deviation": gen["max_deviation"],
        "errors": per_error,
    }


def _initial_state(sim, info_cols: np.ndarray) -> np.ndarray:
    I = info_cols.shape[1]
    if sim["initial"] is None:
        amps = np.ones(I, dtype=complex)
    else:
        amps = np.array([complex(a, b) for a, b in sim["initial"]])
        if amps.size != I:
            raise io.ConfigError(f"simulation.initial has {amps.size} amplitudes but inputs.info has I={I}")
    if not np.any(amps):
        raise io.ConfigError("simulation.initial is the zero vector")
    psi = info_cols @ (amps / np.linalg.norm(amps))
    return np.outer(psi, psi.conj()) if sim["density"] else psi


def _error_model(sim, errors, seed) -> zeno.ErrorModel:
    M = len(errors)
    if sim["signals"] is not None:
        if len(sim["signals"]) != M:
            raise io.ConfigError(f"simulation.signals has {len(sim['signals'])} entries but inputs.errors has M={M}")
        return zeno.ErrorModel(errors, sim["signals"], seed)
    if sim["amplitudes"] is not None:
        if len(sim["amplitudes"]) != M:
            raise io.ConfigError(f"simulation.amplitudes has {len(sim['amplitudes'])} entries "
                                 f"but inputs.errors has M={M}")
        amps = sim["amplitudes"]
    else:
        # |eps| about 1e-2 at the longest interval
        t_top = max([sim["T"]] + list(sim["T_list"] or []))
        amps = [1e-2 / t_top] * M
    return zeno.ErrorModel.constant(errors, amps, seed)


def _simulate(cfg, errors, info_cols, coder, decoder, out_dir: Path, outputs: dict, summary: dict):
    sim = cfg["simulation"]
    model = _error_model(sim, errors, cfg["seed"])
    P = zeno.projector_onto(info_cols)
    psi0 = _initial_state(sim, info_cols)
    trace = zeno.run_protection(psi0, sim["cycles"], sim["T"], coder, decoder, model, P,
                                sim["mode"], sim["n_steps"], sim["project"])
    outputs["trace"] = io.write_fidelity_trace(out_dir / "trace.csv", trace)
    res = {"final_fidelity": trace.final_fidelity, "final_success": trace.final_success,
           "cycles": sim["cycles"], "T": sim["T"], "mode": sim["mode"], "project": sim["project"]}
    if sim["cycles"] > 0:
        res["per_cycle_failure"] = zeno.per_cycle_loss(trace, "failure")
    if trace.density:
        res["max_state_deviation"] = float(np.max(trace.state_deviation))
    if sim["T_list"]:
        total = sim["total_time"] or sim["T"] * max(sim["cycles"], 1)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            fit = zeno.infidelity_scaling(sim["T_list"], total, psi0, coder, decoder, model, P,
                                          sim["mode"], sim["n_steps"], sim["metric"])
        res["scaling"] = {"slope": fit.slope, "intercept": fit.intercept, "metric": fit.metric,
                          "T": fit.T, "values": fit.values, "n_used": fit.n_used,
                          "sufficient": fit.sufficient, "warnings": [str(w.message) for w in caught]}
    summary["simulation"] = io.plain(res)


# ---------------------------------------------------------------- commands

def cmd_find_code(cfg, out_dir, outputs, summary):
    _need(cfg, "errors")
    errors = _errors(cfg)
    I = cfg["search"]["I"]
    try:
        basis = find_code(errors, I, _search_params(cfg))
    except SearchFailure as exc:
        summary.update(converged=False, best_residual=exc.best_residual, message=str(exc))
        raise NumericalFailure(str(exc))
    outputs["code"] = io.write_json(out_dir / "code.json", io.code_basis_to_dict(basis))
    summary.update(converged=True, residuals=io.plain(basis.residuals),
                   check=check_report(basis.codewords, errors, cfg["check"]["tol"]))


def cmd_check_code(cfg, out_dir, outputs, summary):
    _need(cfg, "code", "errors")
    rep = check_report(_basis(cfg, "code").codewords, _errors(cfg), cfg["check"]["tol"])
    outputs["check"] = io.write_json(out_dir / "check.json", io.plain(rep))
    summary.update(orthogonal=rep["orthogonal"], generalized_satisfied=rep["generalized_satisfied"])


def _run_timings(cfg, pair, info_rows, errors, out_dir, outputs, summary):
    try:
        res = solve_timings(pair, info_rows, errors, _control_params(cfg))
        t, G, trace, ok = res.timings, res.G, res.trace, True
    except ControlFailure as exc:
        t, G, trace, ok = exc.best_timings, exc.best_G, exc.trace, False
    outputs["timings"] = io.write_json(out_dir / "timings.json", io.schedule_to_dict(t, pair.time_unit or "ns"))
    outputs["convergence"] = io.write_convergence(out_dir / "convergence.csv", trace)
    U = propagator(t, pair)
    V = schedule_propagator(decoding_sequence(t), pair)
    summary["timings"] = {"converged": ok, "G": float(G), "n_pulses": int(len(t)),
                          "steps": int(trace[-1]["step"]), "total_duration": float(np.sum(t)),
                          "decode_error": float(np.linalg.norm(V @ U - np.eye(len(U))))}
    return t, U, ok


def cmd_solve_timings(cfg, out_dir, outputs, summary):
    _need(cfg, "control_pair", "info", "errors")
    p = cfg["inputs"]["control_pair"]
    pair = io.control_pair_from_dict(io.read_json(p), p)
    _, _, ok = _run_timings(cfg, pair, _basis(cfg, "info").codewords, _errors(cfg), out_dir, outputs, summary)
    if not ok:
        raise NumericalFailure(f"timing solver stopped at G = {summary['timings']['G']:.3e}")


def cmd_simulate(cfg, out_dir, outputs, summary):
    _need(cfg, "errors", "info")
    errors = _errors(cfg)
    info = _basis(cfg, "info").columns()
    inp = cfg["inputs"]
    if inp["coder"]:
        coder, source = io.load_matrix(inp["coder"]), "matrix"
    elif inp["timings"]:
        _need(cfg, "control_pair")
        pair = io.control_pair_from_dict(io.read_json(inp["control_pair"]), inp["control_pair"])
        t = io.schedule_from_dict(io.read_json(inp["timings"]), inp["timings"])
        coder, source = propagator(t, pair), "timings"
    elif inp["code"]:
        coder, source = coding_matrix(info, _basis(cfg, "code").columns()), "code"
    else:
        coder, source = np.eye(info.shape[0], dtype=complex), "identity"
    if unitarity_error(coder) > 1e-8:
        raise io.ConfigError("coder is not unitary within 1e-8")
    summary["coder_source"] = source
    _simulate(cfg, errors, info, coder, coder.conj().T, out_dir, outputs, summary)


def cmd_pipeline(cfg, out_dir, outputs, summary):
    errors = rb78.error_set()
    info_rows = rb78.target_subspace()
    spec = rb78.default_field_spec()
    spec = type(spec)(**{**spec.__dict__,
                         "raman_scale": rb78.calibrate_raman_scale(spec, cfg["pipeline"]["raman_ratio"])})
    pair = rb78.control_pair(spec)
    outputs["errors"] = io.write_json(out_dir / "errors.json", io.error_set_to_dict(errors))
    outputs["info"] = io.write_json(out_dir / "info.json", io.code_basis_to_dict(info_rows, "info_basis"))
    outputs["control_pair"] = io.write_json(out_dir / "control_pair.json", io.control_pair_to_dict(pair))

    basis, tried = None, []
    for s in cfg["pipeline"]["search_seeds"]:
        try:
            basis = find_code(errors, info_rows.shape[0], _search_params(cfg, seed=s))
            tried.append({"seed": s, "converged": True})
            break
        except SearchFailure as exc:
            tried.append({"seed": s, "converged": False, "best_residual": exc.best_residual})
    summary["search"] = io.plain({"attempts": tried})
    if basis is None:
        raise NumericalFailure("code search failed for every seed")
    outputs["code"] = io.write_json(out_dir / "code.json", io.code_basis_to_dict(basis))
    summary["check"] = check_report(basis.codewords, errors, cfg["check"]["tol"])

    info_cols = info_rows.T
    coder, source = coding_matrix(info_cols, basis.columns()), "code"
    if cfg["pipeline"]["solve_timings"]:
        _, U, ok = _run_timings(cfg, pair, info_rows, errors, out_dir, outputs, summary)
        if ok:
            coder, source = U, "timings"
    summary["coder_source"] = source
    summary["eta"] = rb78.gamma_ratio_from_cg()
    _simulate(cfg, errors, info_cols, coder, coder.conj().T, out_dir, outputs, summary)


COMMAND_TABLE = {
    "find-code": cmd_find_code,
    "check-code": cmd_check_code,
    "solve-timings": cmd_solve_timings,
    "simulate": cmd_simulate,
    "rb78-pipeline": cmd_pipeline,
}


def run_config(cfg: dict, out_dir, deterministic: bool = True) -> tuple[int, dict]:
    """Execute a prepared configuration; writes outputs, summary and manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs, summary = {}, {"format": "summary", "command": cfg["command"]}
    code, status = EXIT_OK, "ok"
    try:
        COMMAND_TABLE[cfg["command"]](cfg, out_dir, outputs, summary)
    except NumericalFailure as exc:
        code, status = EXIT_NUMERICAL, "numerical_failure"
        summary["error"] = str(exc)
    outputs["summary"] = io.write_json(out_dir / "summary.json", io.plain(summary))
    manifest = io.build_manifest(cfg, outputs, out_dir, deterministic, status)
    io.write_json(out_dir / "manifest.json", manifest)
    return code, manifest


# ---------------------------------------------------------------- rb78 presets

def rb78_preset(which: str, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    if which == "errors":
        return io.write_json(out_dir / "errors.json", io.error_set_to_dict(rb78.error_set()))
    if which == "control-pair":
        return io.write_json(out_dir / "control_pair.json", io.control_pair_to_dict(rb78.control_pair()))
    if which == "codewords":
        return io.write_json(out_dir / "codewords.json", io.code_basis_to_dict(rb78.appendix_codewords()))
    if which == "info":
        return io.write_json(out_dir / "info.json", io.code_basis_to_dict(rb78.target_subspace(), "info_basis"))
    if which == "timings":
        return io.write_json(out_dir / "paper_timings.json", io.schedule_to_dict(rb78.paper_timings(), "ns"))
    if which == "eta":
        return io.write_json(out_dir / "eta.json", {"format": "eta", **rb78.gamma_ratio_from_cg()})
    raise io.ConfigError(f"unknown rb78 preset {which!r}")


# ---------------------------------------------------------------- argument parsing

def _globals(p: argparse.ArgumentParser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="master random seed")
    p.add_argument("--out", default=d, help="output directory (default: current directory)")
    p.add_argument("--deterministic", action="store_true", default=d,
                   help="omit timestamps so reruns are byte-identical")
    p.add_argument("--tolerance-profile", choices=sorted(io.TOLERANCE_PROFILES), default=d)
    p.add_argument("-v", "--verbose", action="store_true", default=d)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zenocode", description="Zeno-effect code search, control synthesis and simulation")
    _globals(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        _globals(p, suppress=True)
        p.add_argument("--config", help="JSON run configuration")
        return p

    p = cmd("find-code", "search for a code orthogonal to a set of errors")
    p.add_argument("--errors")
    p.add_argument("--I", type=int, dest="I")
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--target-residual", type=float)

    p = cmd("check-code", "evaluate code conditions for a code file against an error set")
    p.add_argument("--code")
    p.add_argument("--errors")
    p.add_argument("--tol", type=float)

    p = cmd("solve-timings", "find pulse timings whose propagator realizes a code")
    p.add_argument("--control-pair")
    p.add_argument("--info")
    p.add_argument("--errors")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--delta-n", type=int)

    p = cmd("simulate", "run repeated protection cycles")
    p.add_argument("--errors")
    p.add_argument("--info")
    p.add_argument("--code")
    p.add_argument("--coder")
    p.add_argument("--timings")
    p.add_argument("--control-pair")
    p.add_argument("--T", type=float, dest="T")
    p.add_argument("--cycles", type=int)
    p.add_argument("--mode", choices=zeno.MODES)

    p = sub.add_parser("rb78", help="rubidium presets")
    _globals(p, suppress=True)
    p.add_argument("preset", choices=["errors", "control-pair", "codewords", "info", "timings", "eta", "pipeline"])
    p.add_argument("--config")
    p.add_argument("--T", type=float, dest="T")
    p.add_argument("--cycles", type=int)
    p.add_argument("--no-solve-timings", action="store_true")
    p.add_argument("--max-steps", type=int)

    p = sub.add_parser("replay", help="rerun a recorded manifest")
    _globals(p, suppress=True)
    p.add_argument("manifest")
    return ap


_FLAG_MAP = {
    "errors": ("inputs", "errors"), "code": ("inputs", "code"), "info": ("inputs", "info"),
    "coder": ("inputs", "coder"), "timings": ("inputs", "timings"),
    "control_pair": ("inputs", "control_pair"),
    "I": ("search", "I"), "max_iterations": ("search", "max_iterations"),
    "target_residual": ("search", "target_residual"), "tol": ("check", "tol"),
    "max_steps": ("control", "max_steps"), "delta_n": ("control", "delta_n"),
    "T": ("simulation", "T"), "cycles": ("simulation", "cycles"), "mode": ("simulation", "mode"),
}


def config_from_args(args, command: str) -> dict:
    base = Path.cwd()
    if getattr(args, "config", None):
        raw = io.read_json(args.config)
        base = Path(args.config).resolve().parent
        if raw.get("command", command) != command:
            raise io.ConfigError(f"config command {raw.get('command')!r} does not match subcommand {command!r}")
    else:
        raw = {"schema_version": io.SCHEMA_VERSION, "command": command}
    raw.setdefault("command", command)
    for flag, (section, key) in _FLAG_MAP.items():
        v = getattr(args, flag, None)
        if v is not None:
            if section == "inputs":
                v = str((Path.cwd() / v).resolve())
            raw.setdefault(section, {})[key] = v
    if getattr(args, "no_solve_timings", False):
        raw.setdefault("pipeline", {})["solve_timings"] = False
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.tolerance_profile is not None:
        raw["tolerance_profile"] = args.tolerance_profile
    return io.prepare_config(raw, base)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out_dir = Path(args.out or ".")
    try:
        if args.command == "rb78" and args.preset != "pipeline":
            path = rb78_preset(args.preset, out_dir)
            print(path)
            return EXIT_OK
        if args.command == "replay":
            man = io.read_json(args.manifest)
            if man.get("format") != "run_manifest":
                raise io.ConfigError(f"{args.manifest}: not a run manifest")
            bad = io.verify_manifest_inputs(man)
            if bad:
                raise io.ConfigError("inputs changed since the manifest was recorded: " + ", ".join(bad))
            cfg = io.prepare_config(man["config"])
            deterministic = man.get("deterministic", True) if args.deterministic is None else True
        else:
            command = "rb78-pipeline" if args.command == "rb78" else args.command
            cfg = config_from_args(args, command)
            deterministic = bool(args.deterministic)
        code, manifest = run_config(cfg, out_dir, deterministic)
        print(json.dumps({"status": manifest["status"], "out": str(out_dir)}))
        return code
    except (io.ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, zeno.DegenerateMeasurement, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
