"""Config-driven experiment runner.

Usage::

    qpdyn <command> CONFIG.json [--out DIR] [--dump-green]

Every run writes its CSV tables plus ``manifest.json`` (the resolved config,
package version and a timestamp) into the output directory.  The directory
comes from ``--out``, else the config's ``output_dir``, and the environment
variable ``QPDYN_OUTPUT_DIR`` overrides both.

Exit status: 0 on success, 2 for invalid configs or violated preconditions,
3 for numerics that did not converge.
"""
from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import json
import math
import os
import sys
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np

from . import __version__
from .arithmetic import (
    DiophantineCondition,
    FrequencyProfile,
    build_test_frequency,
    continued_fraction,
    from_cf,
    golden_mean,
    verify_condition,
)
from .discrepancy import CSV_COLUMNS as DISCREPANCY_COLUMNS
from .discrepancy import (
    EnumerationBudgetError,
    IntervalUnionSet,
    discrepancy_report,
    hitting_count,
)
from .dynamics import (
    MOMENT_CSV_COLUMNS,
    BoundParams,
    BoxTooSmallError,
    InitialState,
    moment_curve,
)
from .green import (
    GeometryError,
    NearSpectrumError,
    UnconvergedError,
    good_box_scan,
    green_direct,
    z_grid,
)
from .operator import OperatorSpec, PotentialSpec
from .spectral import (
    LDT_CSV_COLUMNS,
    ThetaGrid,
    deviation_set_intervals,
    ldt_scan,
    lyapunov_estimate,
)

OUTPUT_ENV = "QPDYN_OUTPUT_DIR"
EXIT_OK, EXIT_PRECONDITION, EXIT_UNCONVERGED = 0, 2, 3

# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int1 = {"type": "integer", "minimum": 1}
_complex = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}

_CONDITION = {
    "type": "object",
    "properties": {
        "form": {"enum": ["power", "log_power", "stretched_exp"]},
        "eta": _pos, "gamma": _pos, "kappa": _pos,
    },
    "required": ["form", "eta", "gamma"],
    "additionalProperties": False,
}

_FREQUENCY = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["golden", "diophantine", "log_liouville", "stretched_liouville"]},
        "cf": {"type": "array", "items": _int1, "minItems": 1},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "depth": _int1,
        "eta": _pos, "gamma": _pos, "kappa": _pos,
        "condition": _CONDITION,
    },
    "additionalProperties": False,
}

_POTENTIAL = {
    "type": "object",
    "properties": {
        "lambda": _num,
        "coeffs": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}},
        "h": _pos,
    },
    "additionalProperties": False,
}

_TGRID = {
    "oneOf": [
        {"type": "array", "items": _pos, "minItems": 1},
        {"type": "object", "properties": {"logspace": {"type": "array", "items": _num,
                                                       "minItems": 3, "maxItems": 3}},
         "required": ["logspace"], "additionalProperties": False},
    ]
}

_BOUND = {
    "type": "object",
    "properties": {
        "theorem": {"enum": ["qdDC", "qdWDC", "qdLiou", "generic", "generic_ca1",
                             "generic_ca2", "generic_ca3"]},
        "p": _pos, "C0": _pos, "c2": _pos, "gamma": _pos, "kappa": _pos, "eta": _pos,
        "epsilon": {"type": "number", "minimum": 0}, "delta": _pos, "sigma": _pos,
        "psi_form": {"enum": ["power", "exp_log_power", "log_power"]},
    },
    "required": ["theorem"],
    "additionalProperties": False,
}

_COMMON = {
    "command": {"type": "string"},
    "seed": {"type": "integer", "minimum": 0},
    "workers": _int1,
    "output_dir": {"type": "string"},
    "frequency": _FREQUENCY,
    "condition": _CONDITION,
    "potential": _POTENTIAL,
    "hopping": {"type": "boolean"},
    "theta": _num,
    "K": {"type": "number", "minimum": 3},
}

_COMMAND_PROPS: dict[str, dict] = {
    "frequency": {"depth": _int1, "N_verify": _int1},
    "discrepancy": {
        "Ns": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
        "M": _int1, "dks_constant": _pos,
    },
    "lyapunov": {
        "energies": {"type": "array", "items": _complex, "minItems": 1},
        "Ns": {"type": "array", "items": _int1, "minItems": 1},
        "theta_samples": _int1, "grid_kind": {"enum": ["uniform", "low_discrepancy"]},
    },
    "ldt": {
        "energy": _complex,
        "Ns": {"type": "array", "items": _int1, "minItems": 1},
        "theta_samples": _int1, "kappa": _pos, "N_ref": _int1, "ref_samples": _int1,
        "grid_kind": {"enum": ["uniform", "low_discrepancy"]},
    },
    "greenbox": {
        "N": {"type": "integer", "minimum": 64}, "psi_delta": _pos, "c2": _pos,
        "z_points": _int1, "eps0": _pos, "theta_samples": _int1,
        "thetas": {"type": "array", "items": _num},
        "search": {"enum": ["window_shift", "four_intervals"]},
        "decay": {"enum": ["distance", "box"]}, "C2": _pos,
        "ldt_scale": _int1, "ldt_theta_samples": _int1, "ldt_kappa": _pos,
        "ldt_real_axis": {"type": "boolean"},
    },
    "moments": {
        "p": _pos, "T_grid": _TGRID, "box_half_width": _int1,
        "phi": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 3},
                "minItems": 1},
        "parseval": {"type": "boolean"}, "tail_guard": {"type": "boolean"},
        "fit": {"enum": ["logT", "loglogT", "logT_power"]},
    },
}
_COMMAND_PROPS["verify-bounds"] = dict(_COMMAND_PROPS["moments"],
                                       bounds={"type": "array", "items": _BOUND, "minItems": 1})

_REQUIRED = {
    "frequency": [], "discrepancy": ["Ns"], "lyapunov": ["energies", "Ns"], "ldt": ["Ns"],
    "greenbox": ["N"], "moments": ["T_grid"], "verify-bounds": ["T_grid", "bounds"],
}

COMMANDS = tuple(_COMMAND_PROPS)


def schema_for(command: str) -> dict:
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "type": "object",
        "properties": {**_COMMON, **_COMMAND_PROPS[command]},
        "required": _REQUIRED[command],
        "additionalProperties": False,
    }


class ConfigError(ValueError):
    pass


def validate_config(command: str, cfg: dict) -> None:
    """Schema check with field-level diagnostics."""
    v = jsonschema.Draft202012Validator(schema_for(command))
    errors = sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"  {'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
                 for e in errors]
        raise ConfigError("invalid config:\n" + "\n".join(lines))
    if cfg.get("command", command) != command:
        raise ConfigError(f"config is for {cfg['command']!r}, not {command!r}")


# ---------------------------------------------------------------------------
# Fixture resolution
# ---------------------------------------------------------------------------

def resolve_condition(d: dict | None) -> DiophantineCondition | None:
    if d is None:
        return None
    return DiophantineCondition(d["form"], d["eta"], d["gamma"], d.get("kappa", 1.0))


def resolve_frequency(cfg: dict) -> FrequencyProfile:
    f = cfg.get("frequency", {"kind": "golden"})
    cond = resolve_condition(f.get("condition") or cfg.get("condition"))
    depth = f.get("depth")
    if "cf" in f:
        prof = from_cf(f["cf"], condition=cond)
    elif "alpha" in f:
        prof = continued_fraction(f["alpha"], depth or 10, condition=cond)
    else:
        kind = f.get("kind", "golden")
        if kind in ("golden", "diophantine"):
            prof = golden_mean(depth or 40)
            if cond is None and kind == "diophantine":
                cond = DiophantineCondition.power_law(f.get("eta", 0.38), 1.0)
        else:
            kw = {k: f[k] for k in ("eta", "kappa", "gamma") if k in f}
            prof = build_test_frequency(kind, depth=depth or 8, **kw)
            cond = cond or prof.condition
    return prof.with_condition(cond) if cond is not None else prof


def resolve_potential(cfg: dict) -> PotentialSpec:
    p = cfg.get("potential", {"lambda": 3.0})
    if "coeffs" in p:
        return PotentialSpec({int(k): complex(re, im) for k, re, im in p["coeffs"]}, p.get("h", 1.0))
    return PotentialSpec.cosine(p.get("lambda", 3.0), p.get("h", 1.0))


def resolve_operator(cfg: dict, window=(0, 0)) -> OperatorSpec:
    return OperatorSpec(resolve_potential(cfg), resolve_frequency(cfg), float(cfg.get("theta", 0.0)),
                        window, hopping=cfg.get("hopping", True), K=cfg.get("K"))


def resolve_phi(cfg: dict) -> InitialState:
    if "phi" not in cfg:
        return InitialState.delta(0)
    sup = {int(row[0]): complex(row[1], row[2] if len(row) > 2 else 0.0) for row in cfg["phi"]}
    return InitialState.normalize(sup)


def resolve_T_grid(spec) -> list[float]:
    if isinstance(spec, dict):
        a, b, n = spec["logspace"]
        return np.logspace(a, b, int(n)).tolist()
    return [float(t) for t in spec]


def _workers(cfg: dict) -> int:
    return int(cfg.get("workers", os.cpu_count() or 1))


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _jsonable(o):
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(f"not serialisable: {type(o)}")


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_frequency(cfg: dict, out: Path, args) -> list[str]:
    prof = resolve_frequency(cfg)
    rows = [(k + 1, a, p, q) for k, (a, (p, q)) in enumerate(zip(prof.cf, prof.convergents))]
    write_csv(out / "convergents.csv", ("k", "a_k", "p_k", "q_k"), rows)
    summary = {"profile": prof.to_json(), "beta_estimate": prof.beta_estimate, "depth": prof.depth}
    if prof.condition is not None:
        N = int(cfg.get("N_verify", min(prof.advertised_scale, 10**6)))
        m = verify_condition(prof, N)
        summary["condition_margin"] = {"margin": m.margin, "n_min": m.n_min, "N": m.N, "holds": m.holds}
    write_json(out / "frequency.json", summary)
    return ["convergents.csv", "frequency.json"]


def cmd_discrepancy(cfg: dict, out: Path, args) -> list[str]:
    prof = resolve_frequency(cfg)
    rows = [discrepancy_report(prof, int(N), cfg.get("M"), dks_constant=cfg.get("dks_constant", 1.0)).row()
            for N in cfg["Ns"]]
    write_csv(out / "discrepancy.csv", DISCREPANCY_COLUMNS, rows)
    return ["discrepancy.csv"]


def cmd_lyapunov(cfg: dict, out: Path, args) -> list[str]:
    spec = resolve_operator(cfg)
    grid = ThetaGrid(int(cfg.get("theta_samples", 1000)), cfg.get("grid_kind", "uniform"))
    rows = []
    for zr, zi in cfg["energies"]:
        z = complex(zr, zi) if zi else float(zr)
        for N in cfg["Ns"]:
            est = lyapunov_estimate(z, spec, int(N), grid, _workers(cfg))
            rows.append((zr, zi, N, est.mean_LN, est.sup_LN, est.std_LN, grid.n))
    write_csv(out / "lyapunov.csv",
              ("z_re", "z_im", "N", "mean_LN", "sup_LN", "std_LN", "theta_samples"), rows)
    return ["lyapunov.csv"]


def cmd_ldt(cfg: dict, out: Path, args) -> list[str]:
    spec = resolve_operator(cfg)
    zr, zi = cfg.get("energy", [0.0, 0.0])
    z = complex(zr, zi) if zi else float(zr)
    grid = ThetaGrid(int(cfg.get("theta_samples", 10000)), cfg.get("grid_kind", "uniform"))
    scan = ldt_scan(z, spec, cfg["Ns"], grid, cfg.get("kappa", 0.01), cfg.get("N_ref"),
                    cfg.get("ref_samples"), _workers(cfg))
    write_csv(out / "ldt.csv", LDT_CSV_COLUMNS, scan.csv_rows())
    write_json(out / "ldt.json", {"c2_fit": scan.c2_fit, "r2": scan.r2, "intercept": scan.intercept,
                                  "strictly_decreasing": scan.strictly_decreasing,
                                  "L_ref": scan.reports[0].L_ref, "N_ref": scan.reports[0].N_ref})
    return ["ldt.csv", "ldt.json"]


def _thetas(cfg: dict) -> list[float]:
    if "thetas" in cfg:
        return [float(t) for t in cfg["thetas"]]
    rng = np.random.default_rng(cfg.get("seed", 0))
    return rng.random(int(cfg.get("theta_samples", 100))).tolist()


def cmd_greenbox(cfg: dict, out: Path, args) -> list[str]:
    spec = resolve_operator(cfg)
    N = int(cfg["N"])
    zs = z_grid(spec.K, int(cfg.get("z_points", 16)), cfg.get("eps0", 0.5))
    c2 = cfg.get("c2", 0.5 * math.log(3))
    rows, reports = [], []
    for th in _thetas(cfg):
        rep = good_box_scan(spec.shifted(th), N, cfg.get("psi_delta", 0.18), c2, zs,
                            cfg.get("search", "window_shift"), cfg.get("decay", "distance"),
                            cfg.get("C2", 1.01))
        reports.append(rep)
        lo, hi = rep.found if rep.found else (None, None)
        rows.append((th, lo, hi, rep.location, rep.worst_margin, rep.candidates_tried))
    write_csv(out / "greenbox.csv", ("theta", "found_lo", "found_hi", "location", "worst_margin",
                                     "candidates_tried"), rows)
    files = ["greenbox.csv"]
    n_found = sum(r.found is not None for r in reports)
    summary = {"found_fraction": n_found / len(reports), "reports": [r.to_json() for r in reports]}
    if "ldt_scale" in cfg:
        summary["hitting"] = _deviation_hits(cfg, spec, zs, N)
    write_json(out / "greenbox.json", summary)
    files.append("greenbox.json")
    if args is not None and getattr(args, "dump_green", False):
        first = next((r for r in reports if r.found), None)
        if first is not None:
            box = spec.shifted(first.theta).with_window(*first.found)
            heat = []
            for z in zs:
                G = np.abs(green_direct(box, z))
                for i, m in enumerate(box.sites):
                    for j, n in enumerate(box.sites):
                        heat.append((z.real, z.imag, m, n, G[i, j]))
            write_csv(out / "green_heat.csv", ("z_re", "z_im", "m", "n", "abs_G"), heat)
            files.append("green_heat.csv")
    return files


def _deviation_hits(cfg: dict, spec: OperatorSpec, zs, N: int) -> dict:
    """Union of empirical deviation sets over the z grid, hit along ``theta + j alpha``."""
    scale = int(cfg["ldt_scale"])
    grid = ThetaGrid(int(cfg.get("ldt_theta_samples", 20000)))
    arcs = []
    # by default the sets are taken at the real parts of the grid energies
    energies = [z.real for z in zs] if cfg.get("ldt_real_axis", True) else list(zs)
    for z in energies:
        S = deviation_set_intervals(z, spec.shifted(0.0), scale, grid,
                                    cfg.get("ldt_kappa", 0.01), workers=_workers(cfg))
        arcs.extend(S.intervals)
    U = IntervalUnionSet(arcs)
    theta = float(cfg.get("theta", 0.0))
    rep = hitting_count(theta, spec.alpha, N, U, index_range="-N..N")
    return {"count": rep.count, "n_points": rep.n_points, "sublinear_cap": N**0.9,
            "measure": U.measure, "components": U.n_components, "bound": rep.bound,
            "applicable": rep.applicable, "note": rep.note}


def _moment_run(cfg: dict, bounds: list[BoundParams]):
    half = int(cfg.get("box_half_width", 200))
    spec = resolve_operator(cfg, (-half, half))
    phi = resolve_phi(cfg)
    guard = 1e-8 if cfg.get("tail_guard", True) else None
    return moment_curve(spec, phi, cfg.get("p", 2.0), resolve_T_grid(cfg["T_grid"]), bounds,
                        parseval=cfg.get("parseval", False), guard=guard,
                        fit_kind=cfg.get("fit", "loglogT"))


def cmd_moments(cfg: dict, out: Path, args) -> list[str]:
    curve = _moment_run(cfg, [])
    write_csv(out / "moments.csv", MOMENT_CSV_COLUMNS, curve.csv_rows())
    fit = curve.fit
    write_json(out / "moments_fit.json",
               {"fit": None if fit is None else fit.__dict__, "p": curve.p})
    return ["moments.csv", "moments_fit.json"]


def cmd_verify_bounds(cfg: dict, out: Path, args) -> list[str]:
    p = cfg.get("p", 2.0)
    bounds = [BoundParams(**dict({"p": p}, **b)) for b in cfg["bounds"]]
    curve = _moment_run(cfg, bounds)
    rows = []
    for tag in curve.bound_values:
        for T, v, b in zip(curve.T_grid, curve.values_spectral, curve.bound_values[tag]):
            rows.append((T, v, b, v / b, tag))
    write_csv(out / "verify_bounds.csv", ("T", "moment", "bound", "ratio", "theorem_tag"), rows)
    summary = {
        "calibration_constants": {t: curve.calibration_constant(t) for t in curve.bound_values},
        "fit": None if curve.fit is None else curve.fit.__dict__,
    }
    write_json(out / "verify_bounds.json", summary)
    extra = {"calibration_constants": summary["calibration_constants"]}
    return ["verify_bounds.csv", "verify_bounds.json"], extra


HANDLERS: dict[str, Callable] = {
    "frequency": cmd_frequency,
    "discrepancy": cmd_discrepancy,
    "lyapunov": cmd_lyapunov,
    "ldt": cmd_ldt,
    "greenbox": cmd_greenbox,
    "moments": cmd_moments,
    "verify-bounds": cmd_verify_bounds,
}

_UNCONVERGED = (UnconvergedError, BoxTooSmallError, NearSpectrumError)
_PRECONDITION = (ValueError, GeometryError, EnumerationBudgetError, KeyError, OSError)


def run(command: str, cfg: dict, out_dir: str | os.PathLike | None = None, args=None) -> int:
    """Validate ``cfg``, execute ``command`` and write artifacts; returns the exit status."""
    try:
        validate_config(command, cfg)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_PRECONDITION
    out = Path(os.environ.get(OUTPUT_ENV) or out_dir or cfg.get("output_dir") or "qpdyn_out")
    try:
        out.mkdir(parents=True, exist_ok=True)
        files = HANDLERS[command](copy.deepcopy(cfg), out, args)
        extra = {}
        if isinstance(files, tuple):
            files, extra = files
    except _UNCONVERGED as exc:
        print(f"unconverged: {exc}", file=sys.stderr)
        return EXIT_UNCONVERGED
    except _PRECONDITION as exc:
        print(f"precondition: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    manifest = {
        "command": command,
        "config": cfg,
        "version": __version__,
        "outputs": files,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        **extra,
    }
    write_json(out / "manifest.json", manifest)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qpdyn", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "frequency": "continued fraction, beta estimate and condition margin",
        "discrepancy": "exact discrepancy of the orbit next to the ETK and Phi bounds",
        "lyapunov": "finite-scale Lyapunov exponents over a phase grid",
        "ldt": "large-deviation fractions and the fitted decay rate",
        "greenbox": "good-interval scan for the Green's function",
        "moments": "time-averaged transport moments over a T grid",
        "verify-bounds": "moment curve against the selected bound formulas",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("config", help="JSON config file")
        p.add_argument("--out", help="output directory")
        if name == "greenbox":
            p.add_argument("--dump-green", action="store_true",
                           help="write |G| entries of the first good box as CSV")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    if not isinstance(cfg, dict):
        print("config must be a JSON object", file=sys.stderr)
        return EXIT_PRECONDITION
    return run(args.command, cfg, args.out, args)


if __name__ == "__main__":
    sys.exit(main())
