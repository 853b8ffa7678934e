"""Command-line front end.

Subcommands: ``certify``, ``solve``, ``probe-monotone``, ``cones``,
``report``.  Exit codes: 0 = verdict computed (even 'not fully stable'),
1 = input error, 2 = internal inconsistency (condition/harness
disagreement or a broken implication chain).

The JSON report is the machine interface; the text rendering mirrors it
1:1.  With a fixed seed, reports are byte-identical across runs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import defaults as dflt
from .errors import FullstabError, InconsistencyError, InputError
from .kkt import check_licq, check_mfcq, multiplier_polytope, probe_crcq
from .modelspec import parse_model
from .monotone import GraphSample, estimate_from_inverse, estimate_moduli
from .polycone import active_set, critical_cone, span_difference, tangent_cone
from .stabharness import (
    CertifyOptions,
    certify,
    graph_sample_from_model,
)
from .visolver import solve_faces, solve_projected

__all__ = ["main", "run"]


def _vector(text: str):
    text = text.strip()
    if not text:
        return ()
    return tuple(float(s) for s in text.split(","))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fullstab",
        description="Certify full stability of parametric variational systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("model", help="model file path")
        p.add_argument("--eta", type=float, default=dflt.ETA,
                       help="graph-sampling radius")
        p.add_argument("--rho-v", type=float, default=dflt.RHO_V,
                       help="canonical-parameter grid radius")
        p.add_argument("--rho-p", type=float, default=dflt.RHO_P,
                       help="basic-parameter grid radius")
        p.add_argument("--samples", type=int, default=dflt.SAMPLES,
                       help="sample count for neighborhood probes")
        p.add_argument("--seed", type=int, default=dflt.SEED)
        p.add_argument("--tol-pd", type=float, default=dflt.TOL_PD,
                       help="positive-definiteness threshold")
        p.add_argument("--tol-act", type=float, default=dflt.TOL_ACT,
                       help="active-set detection tolerance")
        p.add_argument("--grid-v", type=int, default=dflt.GRID_V)
        p.add_argument("--grid-p", type=int, default=dflt.GRID_P)
        p.add_argument("--json", metavar="PATH", default=None,
                       help="write the JSON report here instead of stdout")
        p.add_argument("--csv-table", metavar="PATH", default=None,
                       help="write the localization table (or cone rows) as CSV")
        p.add_argument("--text", action="store_true",
                       help="print the human-readable rendering")

    certify_p = sub.add_parser("certify", help="run the full certification pipeline")
    common(certify_p)

    solve_p = sub.add_parser("solve", help="solve the system at one (v, p)")
    common(solve_p)
    solve_p.add_argument("--v", type=_vector, default=None, help="comma-separated")
    solve_p.add_argument("--p", type=_vector, default=None, help="comma-separated")
    solve_p.add_argument("--x0", type=_vector, default=None, help="start point")

    mono_p = sub.add_parser("probe-monotone", help="estimate monotonicity moduli")
    common(mono_p)
    mono_p.add_argument("--from-csv", metavar="PATH", default=None,
                        help="read graph samples from CSV (u1..un, v1..vn)")

    cones_p = sub.add_parser("cones", help="tangent/critical cone geometry")
    common(cones_p)

    report_p = sub.add_parser("report", help="render a JSON report as text")
    report_p.add_argument("path", help="JSON report file")
    return parser


def _emit(payload: dict, args) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if args.json:
        Path(args.json).write_text(text)
    else:
        sys.stdout.write(text)


def _load_model(path: str):
    p = Path(path)
    if not p.exists():
        raise InputError(f"model file not found: {path}")
    return parse_model(p.read_text())


def _options(args) -> CertifyOptions:
    return CertifyOptions(
        eta=args.eta,
        samples=args.samples,
        rho_v=args.rho_v,
        rho_p=args.rho_p,
        grid_v=args.grid_v,
        grid_p=args.grid_p,
        seed=args.seed,
        tol_act=args.tol_act,
        tol_pd=args.tol_pd,
    )


def _cmd_certify(args) -> int:
    model = _load_model(args.model)
    report = certify(model, _options(args))
    if args.csv_table and getattr(report, "_table", None) is not None:
        Path(args.csv_table).write_text(report._table.to_csv())
    _emit(report.to_json_dict(), args)
    if args.text:
        sys.stdout.write(report.to_text())
    if report.verdict == "inconsistent":
        print("internal inconsistency: " + "; ".join(report.notes), file=sys.stderr)
        return 2
    return 0


def _cmd_solve(args) -> int:
    model = _load_model(args.model)
    ref = model.reference
    if ref is None and (args.v is None or args.p is None):
        raise InputError("model has no reference; pass --v and --p")
    x0, p0, v0 = (
        ref.as_arrays() if ref else (np.zeros(model.n), np.zeros(model.d), np.zeros(model.n))
    )
    v = np.asarray(args.v if args.v is not None else v0, dtype=float)
    p = np.asarray(args.p if args.p is not None else p0, dtype=float)
    x_start = np.asarray(args.x0, dtype=float) if args.x0 is not None else x0
    faces = solve_faces(model, v, p, box_center=x0)
    payload = {
        "v": list(map(float, v)),
        "p": list(map(float, p)),
        "face_solutions": [o.to_json_dict() for o in faces],
    }
    if model.m == 0 or all(model.affine_x):
        proj = solve_projected(model, v, p, x_start)
        payload["projected"] = proj.to_json_dict()
        if faces and proj.converged:
            payload["agreement_gap"] = float(
                min(np.max(np.abs(proj.x - o.x)) for o in faces)
            )
    _emit(payload, args)
    return 0


def _cmd_probe_monotone(args) -> int:
    model = _load_model(args.model)
    if args.from_csv:
        sample = GraphSample.from_csv(Path(args.from_csv).read_text(), model.n)
    else:
        if model.reference is None:
            raise InputError("model has no reference; monotonicity probe needs one")
        sample = graph_sample_from_model(
            model, model.reference, eta=args.eta,
            count=max(10, args.samples // 5), seed=args.seed,
        )
    est = estimate_moduli(sample)
    payload = est.to_json_dict()
    inverse = GraphSample(u=sample.v.copy(), v=sample.u.copy())
    payload["inverse_lipschitz"] = estimate_from_inverse(inverse)
    payload["points"] = len(sample)
    _emit(payload, args)
    return 0


def _cmd_cones(args) -> int:
    model = _load_model(args.model)
    ref = model.reference
    if ref is None:
        raise InputError("model has no reference triple")
    I = active_set(model, ref.x, ref.p, args.tol_act)
    T = tangent_cone(model, ref.x, ref.p, I)
    v_hat = [float(c) for c in model.v_hat(ref)]
    K = critical_cone(T, v_hat)
    mfcq = check_mfcq(model, ref.x, ref.p, args.tol_act)
    licq = check_licq(model, ref.x, ref.p, args.tol_act)
    crcq = probe_crcq(model, ref.x, ref.p, seed=args.seed, tol_act=args.tol_act)
    rays, lin = K.generators()
    payload = {
        "active_set": [i + 1 for i in I],
        "v_hat": v_hat,
        "tangent_rows": [[float(v) for v in row] for row in T.G],
        "tangent_label": "exact" if all(model.affine_x) else "exact under MFCQ",
        "critical_rays": [[float(v) for v in row] for row in rays],
        "critical_lineality_dim": int(lin.shape[1]),
        "critical_span_dim": span_difference(K).dim,
        "tangent_span_dim": span_difference(T).dim,
        "mfcq": mfcq.to_json_dict(),
        "licq": licq.to_json_dict(),
        "crcq": crcq.to_json_dict(),
    }
    try:
        ms = multiplier_polytope(model, ref.x, ref.p, ref.v, args.tol_act)
        payload["multipliers"] = ms.to_json_dict()
    except FullstabError as err:
        payload["multipliers"] = {"error": str(err)}
    if args.csv_table:
        Path(args.csv_table).write_text(
            T.facets_csv() + "\n" + K.generators_csv() + "\n"
        )
    _emit(payload, args)
    return 0


def _cmd_report(args) -> int:
    path = Path(args.path)
    if not path.exists():
        raise InputError(f"report file not found: {args.path}")
    data = json.loads(path.read_text())
    from .stabharness import StabilityReport

    fields = {f: data.get(f) for f in (
        "verdict", "fully_stable", "model_hash", "cq", "multipliers", "gssosc",
        "gusosc", "pvi_pointwise", "smooth_psd", "scoc_probe", "moduli",
        "violations", "violation_count", "localization", "notes", "options",
    )}
    fields["scoc_probe"] = fields["scoc_probe"] or []
    fields["violations"] = fields["violations"] or []
    fields["notes"] = fields["notes"] or []
    fields["violation_count"] = fields["violation_count"] or 0
    report = StabilityReport(schema=data.get("schema", 1), **fields)
    sys.stdout.write(report.to_text())
    return 0


_COMMANDS = {
    "certify": _cmd_certify,
    "solve": _cmd_solve,
    "probe-monotone": _cmd_probe_monotone,
    "cones": _cmd_cones,
    "report": _cmd_report,
}


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return 1 if err.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args)
    except InconsistencyError as err:
        print(f"internal inconsistency: {err}", file=sys.stderr)
        return 2
    except (InputError, FullstabError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
