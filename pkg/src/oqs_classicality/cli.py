"""Command-line front end: scenario runs, sweeps and audit batteries.

Exit codes: 0 success or audit pass, 1 audit failure or numerical tolerance
breach, 2 usage or configuration error.
"""

import argparse
import csv
import io
import json
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import classicality
from .models import CATALOG, make_model
from .protocol import basis_from_angles, cpf_correlation, dni_basis, dni_distance, three_point_protocol
from .qcore import DimensionError, InvalidStateError, as_density, as_matrix, bloch_state

ROW_FIELDS = (
    "model", "gamma", "phi", "omega", "t", "tau", "theta_x", "theta_y", "theta_z",
    "I", "cpf", "w", "lambda", "gamma_rate",
)
OBSERVABLES = ("I", "cpf", "w", "lambda", "gamma_rate")
PROBABILITY_TOL = 1e-10
RATE_STEP = 1e-5
RATE_GRID = "0.05:2:0.01"

MODEL_NOTES = {
    "decay-dnull": "two-level bath decaying |0>->|1>; each decay applies a random Pauli (S/3); zero discord",
    "condisco4": "four-level bath, decay |0>->|k> applies sigma_k; discord generated, same system statistics",
    "general2": "two-level bath with decay and re-excitation, each applying S/3; optional system Hamiltonian",
    "general4": "four-level bath with decay and return transitions applying sigma_k; loses superclassicality",
    "unitary-exchange": "Heisenberg exchange with a maximally mixed qubit bath",
}


class UsageError(Exception):
    pass


class ToleranceBreach(Exception):
    pass


_PI_RE = re.compile(r"^([-+]?(?:\d+\.?\d*|\.\d+)?)\*?pi(?:/(\d+(?:\.\d*)?))?$")


def parse_number(text):
    """Float, a ratio like ``1/3``, or a multiple of pi such as ``pi/4``, ``3pi/8``."""
    text = str(text).strip()
    m = _PI_RE.match(text)
    if m:
        coef = m.group(1)
        coef = 1.0 if coef in ("", "+") else -1.0 if coef == "-" else float(coef)
        den = float(m.group(2)) if m.group(2) else 1.0
        return coef * np.pi / den
    try:
        if "/" in text:
            num, den = text.split("/")
            return float(num) / float(den)
        return float(text)
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"not a number: {text!r}") from None


def _number_arg(text):
    try:
        return parse_number(text)
    except UsageError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def parse_grid(text):
    """``value``, ``a,b,c`` or inclusive ``min:max:step``."""
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, (list, tuple)):
        return [parse_number(v) for v in text]
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid {text!r} must be min:max:step")
        lo, hi, step = (parse_number(p) for p in parts)
        if step <= 0:
            raise UsageError("grid step must be positive")
        if hi < lo:
            return []
        count = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return [lo + step * i for i in range(count)]
    return [parse_number(v) for v in text.split(",") if v.strip()]


def load_matrix(spec):
    """``bloch:x,y,z``, a JSON file (real nested list or {"re", "im"}), or a .npy file."""
    if isinstance(spec, (list, tuple)) and len(spec) == 3 and not isinstance(spec[0], (list, tuple)):
        return bloch_state([float(v) for v in spec])
    if isinstance(spec, (list, tuple, dict)):
        return _matrix_from_json(spec)
    spec = str(spec)
    if spec.startswith("bloch:"):
        vals = [parse_number(v) for v in spec[len("bloch:"):].split(",")]
        if len(vals) != 3:
            raise UsageError("bloch: needs three components")
        return bloch_state(vals)
    if not os.path.exists(spec):
        raise UsageError(f"no such state file: {spec}")
    if spec.endswith(".npy"):
        return as_matrix(np.load(spec))
    with open(spec) as fh:
        return _matrix_from_json(json.load(fh))


def _matrix_from_json(obj):
    if isinstance(obj, dict):
        return as_matrix(np.asarray(obj["re"]) + 1j * np.asarray(obj.get("im", 0.0)))
    return as_matrix(obj)


def fmt(x):
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    x = float(x)
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def build_parser():
    parser = argparse.ArgumentParser(prog="oqs-classicality", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("list-models", help="list catalog models, parameters and closed forms")

    def model_flags(p):
        p.add_argument("--scenario", help="JSON scenario file; flags override its values")
        p.add_argument("--model", choices=sorted(CATALOG))
        p.add_argument("--gamma", type=_number_arg)
        p.add_argument("--phi", type=_number_arg)
        p.add_argument("--omega", type=_number_arg)
        p.add_argument("--hs-omega", dest="hs_omega", type=_number_arg)
        p.add_argument("--tol", type=float)
        p.add_argument("--out")

    for name in ("run", "sweep"):
        p = sub.add_parser(name, help="evaluate observables on a grid" if name == "sweep" else "evaluate one scenario")
        model_flags(p)
        p.add_argument("--t")
        p.add_argument("--tau")
        p.add_argument("--t-grid", dest="t_grid")
        p.add_argument("--tau-grid", dest="tau_grid")
        p.add_argument("--theta-x", dest="theta_x")
        p.add_argument("--theta-y", dest="theta_y", help="angle, grid, or 'auto' for the non-invasive basis")
        p.add_argument("--theta-z", dest="theta_z", help="angle, grid, or 'x' to follow theta-x")
        p.add_argument("--rho0", help="bloch:x,y,z or a matrix file (default I/2)")
        p.add_argument("--sigma0", help="environment state file overriding the model default")
        p.add_argument("--observables", help=f"comma list from {','.join(OBSERVABLES)}")
        p.add_argument("--cpf-outcome", dest="cpf_outcome", type=int, choices=(1, -1))
        p.add_argument("--format", choices=("csv", "json"))
    p = sub.add_parser("check", help="run an audit suite and print a JSON report")
    model_flags(p)
    p.add_argument("--suite", required=True)
    p.add_argument("--t-grid", dest="t_grid")
    p.add_argument("--tau-grid", dest="tau_grid")
    p.add_argument("--theta-grid", dest="theta_grid")
    return parser


def resolve_config(args):
    cfg = {
        "model": None, "params": {}, "rho0": None, "sigma0": None,
        "t": None, "tau": None, "t_grid": None, "tau_grid": None,
        "theta_x": "0", "theta_y": "auto", "theta_z": "0",
        "observables": list(OBSERVABLES), "cpf_outcome": 1, "out": None, "format": "csv", "tol": None,
    }
    if getattr(args, "scenario", None):
        try:
            with open(args.scenario) as fh:
                scenario = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read scenario {args.scenario}: {exc}") from None
        unknown = set(scenario) - set(cfg)
        if unknown:
            raise UsageError(f"unknown scenario fields: {sorted(unknown)}")
        cfg.update(scenario)
        cfg["params"] = dict(scenario.get("params", {}))
    for key in ("gamma", "phi", "omega", "hs_omega"):
        val = getattr(args, key, None)
        if val is not None:
            cfg["params"][key] = val
    for key in cfg:
        if key == "params":
            continue
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if isinstance(cfg["observables"], str):
        cfg["observables"] = [o.strip() for o in cfg["observables"].split(",") if o.strip()]
    bad = set(cfg["observables"]) - set(OBSERVABLES)
    if bad:
        raise UsageError(f"unknown observables {sorted(bad)}")
    if not cfg["model"]:
        raise UsageError("--model is required")
    return cfg


def model_from_config(cfg):
    params = {k: (parse_number(v) if isinstance(v, str) else v) for k, v in cfg["params"].items()}
    params.setdefault("gamma", 1.0)
    params.setdefault("omega", 1.0)
    try:
        return make_model(cfg["model"], **params)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _time_axis(cfg, name):
    grid = cfg.get(f"{name}_grid")
    single = cfg.get(name)
    if grid is not None:
        values = parse_grid(grid)
    elif single is not None:
        values = parse_grid(single)
    else:
        values = [0.0] if name == "tau" else None
    if values is None:
        raise UsageError(f"--{name} or --{name}-grid is required")
    if not values:
        raise UsageError(f"empty {name} grid")
    if any(v < 0 for v in values):
        raise UsageError(f"{name} values must be non-negative")
    return values


def _angle_axis(value, name):
    values = parse_grid(value)
    if not values:
        raise UsageError(f"empty {name} grid")
    return values


def scenario_grid(cfg):
    ts = _time_axis(cfg, "t")
    taus = _time_axis(cfg, "tau")
    txs = _angle_axis(cfg["theta_x"], "theta_x")
    ty_raw = str(cfg["theta_y"]).strip().lower()
    tys = ["auto"] if ty_raw == "auto" else _angle_axis(cfg["theta_y"], "theta_y")
    tz_raw = str(cfg["theta_z"]).strip().lower()
    tzs = ["x"] if tz_raw == "x" else _angle_axis(cfg["theta_z"], "theta_z")
    return [(t, tau, tx, ty, tz) for t in ts for tau in taus for tx in txs for ty in tys for tz in tzs]


def _check_tables(p3, p2):
    for table in (p3, p2):
        if table.probs.min() < -PROBABILITY_TOL or abs(table.total() - 1) > PROBABILITY_TOL:
            raise ToleranceBreach(f"joint probabilities out of tolerance at {table.meta}")
    if np.max(np.abs(p3.probs.sum(axis=(0, 1)) - p2.probs.sum(axis=0))) > PROBABILITY_TOL:
        raise ToleranceBreach("first-measurement statistics depend on later measurements")


class RateCache:
    """Fitted λ_t and γ_t = -d/dt ln|λ_t| with divergence brackets over the swept times."""

    def __init__(self, model, times, tol):
        self.model = model
        self.tol = tol
        times = sorted(set(times))
        self.witness = classicality.rate_witness(model, times, h=RATE_STEP, tol=tol) if times else None
        self.index = {t: i for i, t in enumerate(times)}
        self.flagged = set()
        if self.witness is not None:
            for lo, hi in self.witness.divergences:
                self.flagged.update(t for t in times if lo <= t <= hi)

    def lam(self, t):
        return float(self.witness.lambdas[self.index[t]])

    def rate(self, t):
        r = float(self.witness.rates[self.index[t]])
        if t in self.flagged:
            return np.inf if r >= 0 else -np.inf
        return r


def evaluate_row(model, rho0, sigma0, point, cfg, rates):
    t, tau, tx, ty, tz = point
    tz = tx if tz == "x" else tz
    obs = cfg["observables"]
    X, Z = basis_from_angles(tx), basis_from_angles(tz)
    Y = dni_basis(model, rho0, X, t, sigma0) if ty == "auto" else basis_from_angles(ty)
    row = dict.fromkeys(ROW_FIELDS)
    row.update(model=model.name, t=t, tau=tau, theta_x=tx, theta_z=tz)
    row["theta_y"] = Y.theta if Y.theta is not None else Y.bloch_angles()[0]
    for key in ("gamma", "phi", "omega"):
        if key in model.params:
            row[key] = model.params[key]
    if "I" in obs or "cpf" in obs:
        p3, p2 = three_point_protocol(model, rho0, sigma0, X, Y, Z, t, tau)
        _check_tables(p3, p2)
        if "I" in obs:
            row["I"] = dni_distance(p3, p2)
        if "cpf" in obs:
            try:
                row["cpf"] = cpf_correlation(p3, cfg["cpf_outcome"])
            except ValueError:
                row["cpf"] = None
    if rates is not None:
        lam = rates.lam(t)
        if "lambda" in obs:
            row["lambda"] = lam
        if "w" in obs:
            row["w"] = (3 * lam + 1) / 4
        if "gamma_rate" in obs:
            row["gamma_rate"] = rates.rate(t)
            row["bracket"] = 1 if t in rates.flagged else 0
    return row


def _workers():
    raw = os.environ.get("OQS_CLASSICALITY_THREADS")
    if raw is None:
        return min(4, os.cpu_count() or 1)
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError("OQS_CLASSICALITY_THREADS must be an integer") from None


def compute_rows(cfg):
    model = model_from_config(cfg)
    try:
        rho0 = as_density(load_matrix(cfg["rho0"])) if cfg["rho0"] is not None else np.eye(model.dim_s) / 2
        sigma0 = as_density(load_matrix(cfg["sigma0"])) if cfg["sigma0"] is not None else None
    except (InvalidStateError, DimensionError) as exc:
        raise UsageError(str(exc)) from None
    if rho0.shape != (model.dim_s, model.dim_s):
        raise UsageError("rho0 does not match the system dimension")
    if sigma0 is not None and sigma0.shape != (model.dim_e, model.dim_e):
        raise UsageError("sigma0 does not match the environment dimension")
    grid = scenario_grid(cfg)
    needs_fit = {"w", "lambda", "gamma_rate"} & set(cfg["observables"])
    tol = cfg["tol"] if cfg["tol"] is not None else classicality.DEFAULT_TOL
    rates = None
    if needs_fit:
        try:
            rates = RateCache(model, [p[0] for p in grid], tol)
        except ValueError as exc:
            raise ToleranceBreach(str(exc)) from None
    workers = _workers()
    job = lambda point: evaluate_row(model, rho0, sigma0, point, cfg, rates)
    if workers > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(job, grid))
    else:
        rows = [job(p) for p in grid]
    return rows


def render(rows, fmt_name):
    with_bracket = any("bracket" in r for r in rows)
    fields = list(ROW_FIELDS) + (["bracket"] if with_bracket else [])
    if fmt_name == "json":
        out = [{k: _json_value(r.get(k)) for k in fields} for r in rows]
        return json.dumps(out, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for r in rows:
        writer.writerow([fmt(r.get(k)) if k != "bracket" else str(r.get(k, 0)) for k in fields])
    return buf.getvalue()


def _json_value(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
    return v


def emit(text, path):
    if path:
        try:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise UsageError(f"cannot write {path}: {exc}") from None
    else:
        sys.stdout.write(text)


def cmd_list_models(args):
    lines = []
    for name, (_, keys) in CATALOG.items():
        model = make_model(name, gamma=1.0, phi=1 / 3, omega=1.0)
        oracles = ", ".join(sorted(model.oracles)) or "none"
        lines.append(f"{name}")
        lines.append(f"  {MODEL_NOTES[name]}")
        lines.append(f"  parameters: {', '.join(k.replace('_', '-') for k in keys)}")
        lines.append(f"  dims: system {model.dim_s}, environment {model.dim_e}")
        lines.append(f"  closed forms: {oracles}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def cmd_run(args, require_grid=False):
    cfg = resolve_config(args)
    if require_grid:
        axes = [cfg.get("t_grid"), cfg.get("tau_grid")]
        axes += [cfg[k] for k in ("theta_x", "theta_y", "theta_z") if str(cfg[k]).lower() not in ("auto", "x")]
        if not any(a is not None and len(parse_grid(a)) > 1 for a in axes if a is not None):
            if any(a is not None and len(parse_grid(a)) == 0 for a in axes):
                raise UsageError("empty grid")
            raise UsageError("sweep needs at least one grid axis with several points")
    rows = compute_rows(cfg)
    emit(render(rows, cfg["format"]), cfg["out"])
    return 0


def cmd_check(args):
    cfg = resolve_config(args)
    suite = args.suite
    if suite not in classicality.AUDITS:
        raise UsageError(f"unknown suite {suite!r}; choose from {sorted(classicality.AUDITS)}")
    model = model_from_config(cfg)
    tol = cfg["tol"] if cfg["tol"] is not None else classicality.DEFAULT_TOL
    kwargs = {"tol": tol}
    t_grid = parse_grid(args.t_grid) if args.t_grid else None
    tau_grid = parse_grid(args.tau_grid) if args.tau_grid else None
    thetas = parse_grid(args.theta_grid) if args.theta_grid else None
    for grid in (t_grid, tau_grid, thetas):
        if grid is not None and not grid:
            raise UsageError("empty grid")
    if suite == "rate-witness":
        times = t_grid or parse_grid(RATE_GRID)
        try:
            report = classicality.rate_witness(model, times, h=RATE_STEP, tol=tol).report()
        except ValueError as exc:
            report = classicality.AuditReport("rate-witness", False, float("inf"), {}, {"error": str(exc)})
    else:
        if t_grid:
            kwargs["times"] = t_grid
        if tau_grid and suite in ("fixed-basis", "superclassical", "disco-constraints"):
            kwargs["taus"] = tau_grid
        if thetas and suite == "fixed-basis":
            kwargs["thetas"] = thetas
        if thetas and suite == "superclassical":
            kwargs["thetas_x"] = thetas
        if suite == "superclassical":
            kwargs["workers"] = _workers()
        try:
            report = classicality.AUDITS[suite](model, **kwargs)
        except ValueError as exc:
            raise UsageError(f"suite {suite!r} cannot run on {model.name}: {exc}") from None
    data = report.to_dict()
    data["model"] = model.name
    data["params"] = model.params
    if suite == "superclassical":
        data["details"].pop("samples", None)
    emit(json.dumps(data, indent=2, sort_keys=True) + "\n", cfg["out"])
    return 0 if report.passed else 1


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        if args.command == "list-models":
            return cmd_list_models(args)
        if args.command == "run":
            return cmd_run(args)
        if args.command == "sweep":
            return cmd_run(args, require_grid=True)
        return cmd_check(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ToleranceBreach, InvalidStateError) as exc:
        print(f"tolerance breach: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
