"""Command-line front end.

Reads JSON problem documents, dispatches to the library, and emits CSV
tables (plus a JSON manifest and, for the demo reports, rendered figures)
with deterministic bodies.  Exit codes: 0 success, 2 validation error,
3 numerical-accuracy error; failures print a machine-readable JSON object
on standard error.
"""

from __future__ import annotations

import argparse
import ast
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .basis import GermSpec, build_basis
from .errors import (
    AccuracyError,
    ArithmeticOverflowError,
    DegeneracyError,
    EvaluationError,
    InfeasibleError,
    PceuqError,
    QuadratureError,
    ResourceLimitError,
    SynthesisError,
    UnsupportedConfigError,
    ValidationError,
)
from .pce import (
    PceVector,
    PolynomialMap,
    augustin_bound,
    galerkin_compose,
    project,
    project_adaptive,
    square_map_errors,
    truncation_error_nonpoly,
    truncation_error_poly,
)
from .qp import ProbePolicy, QpProblem, propagate, qp_truncation_error
from .lti import (
    demo_aircraft,
    demo_lqr,
    demo_mpc_spec,
    mpc_constraint_labels,
    condense_mpc,
    pce_trajectory_error,
)
from .quadrature import QuadraturePolicy, tensor_rule
from . import reporting

_VALIDATION_ERRORS = (ValidationError, ArithmeticOverflowError)
_NUMERICAL_ERRORS = (
    AccuracyError,
    QuadratureError,
    EvaluationError,
    ResourceLimitError,
    InfeasibleError,
    DegeneracyError,
    UnsupportedConfigError,
    SynthesisError,
)


# ---------------------------------------------------------------------------
# Document handling
# ---------------------------------------------------------------------------

def _expect_keys(obj: dict, required: set, optional: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise ValidationError(f"{where} must be a JSON object")
    unknown = set(obj) - required - optional
    if unknown:
        raise ValidationError(f"unknown key in {where}: {sorted(unknown)[0]!r}")
    missing = required - set(obj)
    if missing:
        raise ValidationError(f"missing key in {where}: {sorted(missing)[0]!r}")


def _load_document(path: str | None, overrides: list[str] | None) -> dict:
    if path is None:
        doc: dict = {}
    else:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ValidationError(f"input file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"input file is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ValidationError("input document must be a JSON object")
    for item in overrides or []:
        if "=" not in item:
            raise ValidationError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            raise ValidationError(f"override value for {key!r} is not a number: {raw!r}")
        if not isinstance(value, (int, float)):
            raise ValidationError(f"override value for {key!r} must be numeric")
        _apply_override(doc, key.split("."), value)
    return doc


def _apply_override(doc, parts: list[str], value) -> None:
    node = doc
    for part in parts[:-1]:
        if isinstance(node, list):
            node = node[int(part)]
        else:
            node = node.setdefault(part, {})
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


_EXPR_FUNCS = {
    "exp": np.exp, "log": np.log, "sin": np.sin, "cos": np.cos, "tan": np.tan,
    "sinh": np.sinh, "cosh": np.cosh, "tanh": np.tanh, "sqrt": np.sqrt,
    "abs": np.abs, "arctan": np.arctan, "pi": math.pi, "e": math.e,
}


def _check_expr_names(expr: str, n_xi: int) -> None:
    allowed = set(_EXPR_FUNCS) | {f"xi{i + 1}" for i in range(n_xi)}
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ValidationError(f"expression does not parse: {expr!r}") from exc
    for node in ast.walk(tree):
        if isinstance(node, ast.Name) and node.id not in allowed:
            raise ValidationError(f"unknown name {node.id!r} in expression")
        if isinstance(node, ast.Attribute):
            raise ValidationError("attribute access is not allowed in expressions")
        if isinstance(node, ast.Call) and not isinstance(node.func, ast.Name):
            raise ValidationError("only plain function calls are allowed in expressions")


def function_from_json(obj: dict, n_xi: int, where: str = "function"):
    """Compile a function document into a callable of the germ coordinates.

    Returns (callable, is_polynomial, polynomial_degree_or_None).
    """
    if not isinstance(obj, dict) or "type" not in obj:
        raise ValidationError(f"{where} must be an object with a 'type' key")
    kind = obj["type"]
    if kind == "constant":
        _expect_keys(obj, {"type", "value"}, set(), where)
        value = float(obj["value"])
        return (lambda *cols: np.full_like(np.asarray(cols[0], dtype=float), value)), True, 0
    if kind == "polynomial":
        _expect_keys(obj, {"type", "terms"}, set(), where)
        pm = PolynomialMap.from_json({"n_inputs": n_xi, "terms": obj["terms"]})
        return (lambda *cols: pm(*cols)), True, pm.degree
    if kind == "expr":
        _expect_keys(obj, {"type", "expr"}, set(), where)
        expr = str(obj["expr"])
        _check_expr_names(expr, n_xi)
        code = compile(expr, "<function>", "eval")

        def fn(*cols):
            ns = dict(_EXPR_FUNCS)
            for i, col in enumerate(cols):
                ns[f"xi{i + 1}"] = col
            return eval(code, {"__builtins__": {}}, ns)

        return fn, False, None
    raise ValidationError(f"unknown function type {kind!r}")


def _policy_from_args(args) -> QuadraturePolicy:
    kwargs = {}
    if getattr(args, "quad_points", None) is not None:
        kwargs["initial"] = args.quad_points
    if getattr(args, "tolerance", None) is not None:
        kwargs["rtol"] = args.tolerance
    return QuadraturePolicy(**kwargs)


def _emit(args, header, rows, manifest_extra=None, figure=None):
    """Write CSV (or stdout), the manifest, and an optional figure."""
    text = reporting.csv_text(header, rows)
    outputs = []
    if args.output:
        path = reporting.write_csv(args.output, header, rows)
        outputs.append(str(path))
        if figure is not None:
            fig_path = figure(args.output)
            if fig_path is not None:
                outputs.append(str(fig_path))
        manifest = {
            "command": args.command,
            "package_version": __version__,
            "outputs": outputs,
            **(manifest_extra or {}),
        }
        reporting.write_manifest(args.output, manifest)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_project(args) -> int:
    doc = _load_document(args.input, args.set)
    _expect_keys(doc, {"germ", "function"}, {"degree"}, "project document")
    germ = GermSpec.from_json(doc["germ"])
    degree = args.degree if args.degree is not None else doc.get("degree")
    if degree is None:
        raise ValidationError("projection needs a basis degree (--degree or 'degree')")
    degree = int(degree)
    fn, is_poly, fdeg = function_from_json(doc["function"], germ.n_xi)
    basis = build_basis(germ, degree)
    trace: list = []
    if is_poly:
        rule = tensor_rule(germ, [max(degree, fdeg) + 1] * germ.n_xi)
        vec = project(fn, basis, rule)
        orders = {"points_per_dim": max(degree, fdeg) + 1}
    else:
        vec = project_adaptive(fn, basis, _policy_from_args(args), trace=trace)
        orders = {"points_per_dim": trace[-1][0], "refinements": len(trace)}

    if args.output and not str(args.output).endswith(".csv"):
        path = Path(args.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(vec.to_json(), indent=2, sort_keys=True) + "\n")
        reporting.write_manifest(args.output, {
            "command": args.command,
            "package_version": __version__,
            "outputs": [str(path)],
            "quadrature": orders,
        })
        return 0
    header = ["basis_index", "degrees", "coefficient"]
    rows = [
        (j, "|".join(str(d) for d in idx), c)
        for j, (idx, c) in enumerate(zip(basis.index_tuples(), vec.coeffs))
    ]
    if args.output:
        return _emit(args, header, rows, {"quadrature": orders})
    sys.stdout.write(json.dumps(vec.to_json(), indent=2, sort_keys=True) + "\n")
    return 0


def _parse_n_values(doc, args, limit: int | None = None) -> list[int]:
    if args.n is not None:
        values = [int(args.n)]
    else:
        raw = doc.get("n")
        if raw is None:
            raise ValidationError("a retained index is required (--n or 'n')")
        values = [int(v) for v in (raw if isinstance(raw, list) else [raw])]
    for v in values:
        if v < 0:
            raise ValidationError(f"retained index must be non-negative, got {v}")
        if limit is not None and v >= limit:
            raise ValidationError(f"retained index {v} outside basis of size {limit}")
    return values


def _cmd_error_poly(args) -> int:
    doc = _load_document(args.input, args.set)
    _expect_keys(doc, {"germ", "inputs", "map"}, {"degree", "n"}, "error-poly document")
    germ = GermSpec.from_json(doc["germ"])
    degree = args.degree if args.degree is not None else doc.get("degree")
    if degree is None:
        raise ValidationError("input degree is required (--degree or 'degree')")
    basis = build_basis(germ, int(degree))
    inputs = [PceVector(basis, np.asarray(c, dtype=float)) for c in doc["inputs"]]
    pmap = PolynomialMap.from_json(doc["map"])
    y = galerkin_compose(pmap, inputs)
    n_values = _parse_n_values(doc, args)
    rows = []
    for n in n_values:
        err = truncation_error_poly(y, n)
        rows.append((err.n, err.value, err.flag))
    extra = {
        "input_degree": int(degree),
        "composed_degree": y.basis.max_degree,
        "composed_dimension": len(y.basis),
    }
    return _emit(args, ["n", "value", "flag"], rows, extra)


def _cmd_error_nonpoly(args) -> int:
    doc = _load_document(args.input, args.set)
    _expect_keys(doc, {"germ", "function"}, {"degree", "n"}, "error-nonpoly document")
    germ = GermSpec.from_json(doc["germ"])
    degree = args.degree if args.degree is not None else doc.get("degree")
    if degree is None:
        raise ValidationError("a retained total degree is required (--degree or 'degree')")
    basis = build_basis(germ, int(degree))
    fn, _, _ = function_from_json(doc["function"], germ.n_xi)
    if args.n is not None or "n" in doc:
        n_values = _parse_n_values(doc, args, limit=len(basis))
    else:
        n_values = [len(basis) - 1]
    policy = _policy_from_args(args)
    rows = []
    trace: list = []
    for n in n_values:
        err = truncation_error_nonpoly(fn, basis, policy, n=n, trace=trace)
        rows.append((err.n, err.value, err.flag))
    extra = {"quadrature": {"points_per_dim": trace[-1][0], "refinements": len(trace)}}
    return _emit(args, ["n", "value", "flag"], rows, extra)


def _cmd_augustin(args) -> int:
    doc = _load_document(args.input, args.set)
    _expect_keys(doc, {"germ", "derivative", "k"}, {"n"}, "augustin document")
    germ = GermSpec.from_json(doc["germ"])
    fn, _, _ = function_from_json(doc["derivative"], germ.n_xi, where="derivative")
    k = int(doc["k"])
    n_values = _parse_n_values(doc, args)
    policy = _policy_from_args(args)
    rows = []
    trace: list = []
    for n in n_values:
        err = augustin_bound(fn, k=k, n=n, germ=germ, policy=policy, trace=trace)
        rows.append((err.n, err.value, err.flag))
    extra = {
        "derivative_order": k,
        "quadrature": {"points_per_dim": trace[-1][0], "refinements": len(trace)},
    }
    return _emit(args, ["n", "value", "flag"], rows, extra)


def _qp_problem_from_json(doc: dict) -> QpProblem:
    _expect_keys(doc, {"H", "A", "basis", "h", "b"}, set(), "qp document")
    _expect_keys(doc["basis"], {"germ", "degree"}, set(), "qp basis")
    germ = GermSpec.from_json(doc["basis"]["germ"])
    basis = build_basis(germ, int(doc["basis"]["degree"]))

    def entry(obj, where):
        if isinstance(obj, dict):
            return PceVector.from_json(obj, basis=basis)
        return PceVector(basis, np.asarray(obj, dtype=float))

    h = tuple(entry(o, "h") for o in doc["h"])
    b = tuple(entry(o, "b") for o in doc["b"])
    return QpProblem(
        H=np.asarray(doc["H"], dtype=float),
        A=np.asarray(doc["A"], dtype=float),
        h=h,
        b=b,
    )


def _cmd_qp_propagate(args) -> int:
    if args.input is None:
        raise ValidationError("qp-propagate requires --input")
    doc = _load_document(args.input, args.set)
    qp = _qp_problem_from_json(doc)
    ys, report = propagate(qp, ProbePolicy())
    rows = [
        (i, j, ys[i].coeffs[j])
        for i in range(len(ys))
        for j in range(len(qp.basis))
    ]
    extra = {
        "varying_active_set": report.varying,
        "active_set": list(report.active.indices) if report.active is not None else None,
        "probed_active_sets": sorted({str(list(s)) for s in report.probed_active_sets}),
    }
    status = _emit(args, ["variable", "basis_index", "coefficient"], rows, extra)
    if args.n is not None and args.output:
        errs = qp_truncation_error(qp, report, int(args.n))
        err_rows = [(i, e.n, e.value, e.flag) for i, e in enumerate(errs)]
        err_path = Path(args.output)
        err_path = err_path.with_name(err_path.stem + "_errors" + (err_path.suffix or ".csv"))
        reporting.write_csv(err_path, ["variable", "n", "value", "flag"], err_rows)
    return status


def _cmd_table1(args) -> int:
    if args.z is None:
        raise ValidationError("table1 requires --z with the input coefficients z1..z_dz")
    z = [float(v) for v in str(args.z).split(",") if v != ""]
    dz = int(args.dz) if args.dz is not None else len(z)
    if len(z) != dz:
        raise ValidationError(f"--z must provide exactly {dz} coefficients, got {len(z)}")
    if dz < 1:
        raise ValidationError("the quadratic-map benchmark needs degree >= 1")
    coeffs = [float(args.z0)] + z
    exact, bound = square_map_errors(coeffs, _policy_from_args(args))
    header = ["dz"] + [f"z{i + 1}" for i in range(dz)] + ["e_sq", "ehat_sq"]
    rows = [(dz, *z, exact.value**2, bound.value**2)]
    return _emit(args, header, rows, {"z0": float(args.z0)})


def _cmd_mpc_demo(args) -> int:
    doc = _load_document(args.input, args.set) if (args.input or args.set) else None
    spec = demo_mpc_spec(doc)
    qp = condense_mpc(spec)
    labels = mpc_constraint_labels(spec)
    ys, report = propagate(qp, ProbePolicy())
    rows = [
        (stage, j, ys[stage].coeffs[j])
        for stage in range(len(ys))
        for j in range(len(qp.basis))
    ]
    active_stages = sorted(labels[i].stage for i in report.active.indices) \
        if report.active is not None else []
    extra = {
        "varying_active_set": report.varying,
        "active_constraint_stages": active_stages,
        "horizon": spec.horizon,
        "dt": spec.system.dt,
    }

    def figure(output):
        if args.no_plot:
            return None
        means = np.array([y.mean() for y in ys])
        stds = np.array([math.sqrt(y.variance()) for y in ys])
        return reporting.render_input_uncertainty(
            np.arange(len(ys)), means, stds, active_stages, spec.system.dt, output
        )

    return _emit(args, ["stage", "basis_index", "coefficient"], rows, extra, figure)


def _cmd_ltierr_demo(args) -> int:
    doc = _load_document(args.input, args.set) if (args.input or args.set) else {}
    _expect_keys(doc, set(), {"t_max", "t_step", "degrees", "components"}, "ltierr document")
    t_max = float(doc.get("t_max", 20.0))
    t_step = float(doc.get("t_step", 0.1))
    degrees = [int(v) for v in doc.get("degrees", [2, 3, 4])]
    components = [int(v) for v in doc.get("components", [3])]
    sys_model = demo_aircraft()
    design = demo_lqr()
    x0 = np.array([0.0, 0.0, 0.0, 40.0])
    germ = GermSpec.legendre(1)
    steps = int(round(t_max / t_step))
    t_grid = [round(i * t_step, 12) for i in range(steps + 1)]
    rows = pce_trajectory_error(
        sys_model, design.k, x0, germ, t_grid, degrees,
        components=components, policy=_policy_from_args(args),
    )
    extra = {
        "degrees": degrees,
        "components": components,
        "t_max": t_max,
        "t_step": t_step,
        "lqr_gain": design.k.tolist(),
    }

    def figure(output):
        if args.no_plot:
            return None
        return reporting.render_error_curves(rows, output)

    return _emit(args, ["t", "n", "component", "value"], rows, extra, figure)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "project": _cmd_project,
    "error-poly": _cmd_error_poly,
    "error-nonpoly": _cmd_error_nonpoly,
    "augustin": _cmd_augustin,
    "qp-propagate": _cmd_qp_propagate,
    "mpc-demo": _cmd_mpc_demo,
    "ltierr-demo": _cmd_ltierr_demo,
    "table1": _cmd_table1,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pceuq",
        description="Truncated polynomial chaos with exact L2 error accounting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--input", help="path to the JSON problem document")
        p.add_argument("--output", help="path of the CSV/JSON output file")
        p.add_argument("--degree", type=int, help="basis total degree")
        p.add_argument("--n", type=int, help="retained basis index")
        p.add_argument("--quad-points", type=int, dest="quad_points",
                       help="initial quadrature points per dimension")
        p.add_argument("--tolerance", type=float,
                       help="relative tolerance of the quadrature refinement")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="numeric override applied to the input document")
        if name in ("mpc-demo", "ltierr-demo"):
            p.add_argument("--no-plot", action="store_true",
                           help="skip rendering the report figure")
        if name == "table1":
            p.add_argument("--dz", type=int, help="input expansion degree")
            p.add_argument("--z", help="comma-separated coefficients z1..z_dz")
            p.add_argument("--z0", type=float, default=0.0, help="mean coefficient")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _VALIDATION_ERRORS as exc:
        _emit_error(exc)
        return 2
    except _NUMERICAL_ERRORS as exc:
        _emit_error(exc)
        return 3


def _emit_error(exc: PceuqError) -> None:
    payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    sys.stderr.write(json.dumps(payload) + "\n")


if __name__ == "__main__":
    sys.exit(main())
