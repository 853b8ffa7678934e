"""Empirical stability harness and the end-to-end certification pipeline.

``verify_inequality`` checks the defining pair inequality

    ||(v1 - v2) - 2 kappa [theta(v1, p1) - theta(v2, p2)]||
        <= ||v1 - v2|| + ell * d(p1, p2)^exponent

over all (capped, deterministically subsampled) pairs of a localization
table.  ``fit_moduli`` estimates kappa from parameter-frozen pairs, the
Hoelder exponent from a log-log fit on canonically-frozen pairs, and the
smallest workable ell by bisection.  ``certify`` runs the whole pipeline:
constraint qualifications, multiplier enumeration, pointwise and sampled
second-order tests, the bordered-determinant probe, the solver table and
the inequality verification; the headline verdict is condition-driven,
with the harness as corroboration, and any disagreement is reported as
'inconsistent', never silently resolved.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .defaults import (
    BOX_RADIUS,
    ETA,
    GRID_P,
    GRID_V,
    LAMBDA_SCAN_RANDOM,
    PAIR_CAP,
    RANDOM_NODES,
    RHO_P,
    RHO_V,
    SAMPLES,
    SEED,
    TOL_ACT,
    TOL_CQ,
    TOL_INEQ,
    TOL_PD,
)
from .errors import (
    DegenerateSampleError,
    InputError,
    LocalizationError,
    NoMultiplierError,
    UnboundedMultiplierError,
)
from .kkt import (
    _jsonify,
    check_licq,
    check_mfcq,
    multiplier_polytope,
    probe_crcq,
    strict_complement,
)
from .modelspec import ParametricModel, ReferenceTriple, print_model
from .monotone import GraphSample
from .secondorder import (
    check_gssosc,
    check_gusosc,
    check_pvi_pointwise,
    check_smooth_psd,
    scoc_probe,
)
from .visolver import LocalizationTable, build_localization, solve_faces

__all__ = [
    "StabilityModuli",
    "StabilityReport",
    "CertifyOptions",
    "verify_inequality",
    "fit_moduli",
    "certify",
    "graph_sample_from_model",
]


# ---------------------------------------------------------------------------
# pair inequality


def _pair_indices(count: int, cap: int = PAIR_CAP):
    total = count * (count - 1) // 2
    if total <= cap:
        return np.triu_indices(count, k=1)
    rng = np.random.default_rng(0)  # deterministic subsampling
    ii = rng.integers(0, count, size=cap)
    jj = rng.integers(0, count, size=cap)
    keep = ii != jj
    lo = np.minimum(ii[keep], jj[keep])
    hi = np.maximum(ii[keep], jj[keep])
    return lo, hi


def verify_inequality(
    table: LocalizationTable,
    kappa: float,
    ell: float,
    exponent: float = 1.0,
    tol: float = TOL_INEQ,
    pair_cap: int = PAIR_CAP,
    max_reported: int = 20,
):
    """Violating pairs of the full-stability inequality at (kappa, ell,
    exponent); empty result corroborates the moduli on this table."""
    if len(table) == 0:
        raise InputError("empty localization table")
    if kappa <= 0 or ell < 0:
        raise InputError("need kappa > 0 and ell >= 0")
    ii, jj = _pair_indices(len(table), pair_cap)
    dv = table.v_nodes[ii] - table.v_nodes[jj]
    dx = table.x_values[ii] - table.x_values[jj]
    dp = (
        np.linalg.norm(table.p_nodes[ii] - table.p_nodes[jj], axis=1)
        if table.p_nodes.shape[1]
        else np.zeros(ii.size)
    )
    lhs = np.linalg.norm(dv - 2.0 * kappa * dx, axis=1)
    rhs = np.linalg.norm(dv, axis=1) + ell * dp**exponent + tol
    bad = np.flatnonzero(lhs > rhs)
    order = np.argsort(lhs[bad] - rhs[bad])[::-1]
    bad = bad[order]
    return [
        {
            "pair": (int(ii[k]), int(jj[k])),
            "lhs": float(lhs[k]),
            "rhs": float(rhs[k]),
            "margin": float(lhs[k] - rhs[k]),
            "d_p": float(dp[k]),
        }
        for k in bad[:max_reported]
    ], int(bad.size)


@dataclass
class StabilityModuli:
    kappa_hat: Optional[float]  # None when every p-frozen pair is degenerate
    kappa_vacuous: bool
    kappa_used: float
    kappa_flagged: bool  # kappa_hat <= tolerance: not strongly monotone
    ell_hat: Optional[float]  # None when no finite ell clears the table
    exponent_hat: Optional[float]  # fitted; None when parameter-independent
    exponent_used: float  # rounded to 1 or 1/2
    p_frozen_pairs: int
    v_frozen_pairs: int
    witness: dict = field(default_factory=dict)

    def to_json_dict(self):
        return {
            "kappa": self.kappa_used,
            "kappa_hat": self.kappa_hat,
            "kappa_vacuous": self.kappa_vacuous,
            "kappa_flagged": self.kappa_flagged,
            "ell": self.ell_hat,
            "exponent": self.exponent_used,
            "exponent_fitted": self.exponent_hat,
            "p_frozen_pairs": self.p_frozen_pairs,
            "v_frozen_pairs": self.v_frozen_pairs,
            "witness": _jsonify(self.witness),
        }


def fit_moduli(
    table: LocalizationTable,
    tol: float = TOL_INEQ,
    pair_cap: int = PAIR_CAP,
) -> StabilityModuli:
    """Fit (kappa, ell, exponent) from the table.

    kappa is the worst parameter-frozen Rayleigh ratio
    <v1-v2, x1-x2>/||x1-x2||^2 (vacuous when the localization does not
    move with v); the exponent comes from a log-log regression on
    canonically-frozen pairs rounded to {1/2, 1}; ell is the smallest
    value with zero violations at those (kappa, exponent), found by
    bisection.
    """
    N = len(table)
    if N < 2:
        raise InputError("need at least two table entries")
    d = table.p_nodes.shape[1]

    # --- kappa from p-frozen pairs
    groups = {}
    for k in range(N):
        groups.setdefault(table.p_nodes[k].tobytes(), []).append(k)
    kappa_hat = None
    p_frozen = 0
    witness = {}
    for idx in groups.values():
        if len(idx) < 2:
            continue
        idx = np.array(idx)
        ii, jj = np.triu_indices(len(idx), k=1)
        dv = table.v_nodes[idx[ii]] - table.v_nodes[idx[jj]]
        dx = table.x_values[idx[ii]] - table.x_values[idx[jj]]
        sq = np.einsum("ij,ij->i", dx, dx)
        keep = np.sqrt(sq) > 1e-12
        p_frozen += int(np.sum(keep))
        if not np.any(keep):
            continue
        ratios = np.einsum("ij,ij->i", dv[keep], dx[keep]) / sq[keep]
        k_min = int(np.argmin(ratios))
        if kappa_hat is None or ratios[k_min] < kappa_hat:
            kappa_hat = float(ratios[k_min])
            kidx = np.flatnonzero(keep)[k_min]
            witness["kappa_pair"] = (int(idx[ii[kidx]]), int(idx[jj[kidx]]))
    kappa_vacuous = kappa_hat is None
    kappa_flagged = (kappa_hat is not None) and kappa_hat <= tol
    kappa_used = 1.0 if kappa_vacuous or kappa_flagged else kappa_hat
    if kappa_flagged:
        kappa_used = 1.0

    # --- exponent from v-frozen pairs at the canonical center
    exponent_hat = None
    v_frozen = 0
    if d:
        center = table.v_nodes[0] if N else None
        # the tensor grid repeats each v-node across all p-nodes; use the
        # node closest to the table's median v as the frozen slice
        med = np.median(table.v_nodes, axis=0)
        dist = np.linalg.norm(table.v_nodes - med, axis=1)
        vkey = table.v_nodes[int(np.argmin(dist))]
        sel = np.flatnonzero(np.linalg.norm(table.v_nodes - vkey, axis=1) < 1e-12)
        if sel.size >= 2:
            ii, jj = np.triu_indices(sel.size, k=1)
            dx = np.linalg.norm(
                table.x_values[sel[ii]] - table.x_values[sel[jj]], axis=1
            )
            dp = np.linalg.norm(
                table.p_nodes[sel[ii]] - table.p_nodes[sel[jj]], axis=1
            )
            keep = (dx > 1e-12) & (dp > 1e-12)
            v_frozen = int(np.sum(keep))
            if v_frozen >= 2:
                slope, _ = np.polyfit(np.log(dp[keep]), np.log(dx[keep]), 1)
                exponent_hat = float(slope)
    exponent_used = 1.0
    if exponent_hat is not None:
        exponent_used = 0.5 if abs(exponent_hat - 0.5) < abs(exponent_hat - 1.0) else 1.0

    # --- ell by bisection at (kappa_used, exponent_used)
    ell_hat, ell_witness = _fit_ell(table, kappa_used, exponent_used, tol, pair_cap)
    if ell_witness:
        witness["ell_blocking_pair"] = ell_witness
    return StabilityModuli(
        kappa_hat=kappa_hat,
        kappa_vacuous=kappa_vacuous,
        kappa_used=kappa_used,
        kappa_flagged=kappa_flagged,
        ell_hat=ell_hat,
        exponent_hat=exponent_hat,
        exponent_used=exponent_used,
        p_frozen_pairs=p_frozen,
        v_frozen_pairs=v_frozen,
        witness=witness,
    )


def _fit_ell(table, kappa, exponent, tol, pair_cap):
    ii, jj = _pair_indices(len(table), pair_cap)
    dv = table.v_nodes[ii] - table.v_nodes[jj]
    dx = table.x_values[ii] - table.x_values[jj]
    dp = (
        np.linalg.norm(table.p_nodes[ii] - table.p_nodes[jj], axis=1)
        if table.p_nodes.shape[1]
        else np.zeros(ii.size)
    )
    lhs = np.linalg.norm(dv - 2.0 * kappa * dx, axis=1)
    base = np.linalg.norm(dv, axis=1)
    frozen = dp <= 1e-15
    gap = lhs - base - tol
    if np.any(frozen & (gap > 0)):
        k = int(np.argmax(np.where(frozen, gap, -np.inf)))
        return None, {
            "pair": (int(ii[k]), int(jj[k])),
            "margin": float(gap[k]),
            "reason": "parameter-frozen pair violates at every ell",
        }

    def n_violations(ell):
        rhs = base + ell * dp**exponent + tol
        return int(np.sum(lhs > rhs))

    moving = ~frozen
    if not np.any(moving):
        return 0.0, None
    hi_exact = float(np.max((lhs[moving] - base[moving] - tol) / dp[moving] ** exponent))
    hi = max(0.0, hi_exact) + 1.0
    lo = 0.0
    if n_violations(lo) == 0:
        return 0.0, None
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if n_violations(mid) == 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-9 * (1.0 + hi):
            break
    return hi, None


# ---------------------------------------------------------------------------
# operator graph sampling for the monotonicity front end


def graph_sample_from_model(
    model: ParametricModel,
    ref: ReferenceTriple,
    eta: float = ETA,
    count: int = 100,
    seed: int = SEED,
) -> GraphSample:
    """Pairs (x, v) on the graph of T = f(., p) + N_{C(p)}(.) with the
    basic parameter frozen at the reference."""
    x0, p0, v0 = ref.as_arrays()
    rng = np.random.default_rng(seed)
    us, vs = [], []
    if model.m == 0:
        for _ in range(count):
            x = x0 + eta * rng.uniform(-1, 1, size=model.n)
            v = np.array([float(c) for c in model.f_values(list(x), list(p0))])
            if np.linalg.norm(v - v0) <= eta * 10:
                us.append(x)
                vs.append(v)
    else:
        attempts = 0
        while len(us) < count and attempts < 40 * count:
            attempts += 1
            v = v0 + eta * rng.uniform(-1, 1, size=model.n)
            outs = solve_faces(model, v, p0, box_center=x0)
            if len(outs) == 1:
                us.append(outs[0].x)
                vs.append(v)
    if len(us) < 2:
        raise DegenerateSampleError("could not sample the operator graph")
    return GraphSample(u=np.array(us), v=np.array(vs))


# ---------------------------------------------------------------------------
# certification pipeline


@dataclass
class CertifyOptions:
    eta: float = ETA
    samples: int = SAMPLES
    rho_v: float = RHO_V
    rho_p: float = RHO_P
    grid_v: int = GRID_V
    grid_p: int = GRID_P
    n_random: int = RANDOM_NODES
    box_radius: float = BOX_RADIUS
    seed: int = SEED
    tol_act: float = TOL_ACT
    tol_pd: float = TOL_PD
    tol_cq: float = TOL_CQ
    scan_random: int = LAMBDA_SCAN_RANDOM
    pair_cap: int = PAIR_CAP

    def to_json_dict(self):
        return {k: getattr(self, k) for k in sorted(self.__dataclass_fields__)}


@dataclass
class StabilityReport:
    verdict: str  # fully_stable | not_fully_stable | inconsistent | undetermined
    fully_stable: Optional[bool]
    model_hash: str
    cq: dict
    multipliers: Optional[dict]
    gssosc: Optional[dict]
    gusosc: Optional[dict]
    pvi_pointwise: Optional[dict]
    smooth_psd: Optional[dict]
    scoc_probe: list
    moduli: Optional[dict]
    violations: list
    violation_count: int
    localization: Optional[dict]
    notes: list
    options: dict
    schema: int = 1

    def to_json_dict(self):
        return _jsonify(
            {
                "schema": self.schema,
                "verdict": self.verdict,
                "fully_stable": self.fully_stable,
                "model_hash": self.model_hash,
                "cq": self.cq,
                "multipliers": self.multipliers,
                "gssosc": self.gssosc,
                "gusosc": self.gusosc,
                "pvi_pointwise": self.pvi_pointwise,
                "smooth_psd": self.smooth_psd,
                "scoc_probe": self.scoc_probe,
                "moduli": self.moduli,
                "violations": self.violations,
                "violation_count": self.violation_count,
                "localization": self.localization,
                "notes": self.notes,
                "options": self.options,
            }
        )

    def to_text(self) -> str:
        """Human-readable rendering mirroring the JSON 1:1."""
        lines = []

        def emit(key, value, indent=0):
            pad = "  " * indent
            if isinstance(value, dict):
                lines.append(f"{pad}{key}:")
                for k in sorted(value):
                    emit(k, value[k], indent + 1)
            elif isinstance(value, list):
                lines.append(f"{pad}{key}: [{len(value)} item(s)]")
                for i, item in enumerate(value):
                    emit(str(i), item, indent + 1)
            else:
                lines.append(f"{pad}{key}: {value}")

        data = self.to_json_dict()
        for key in [
            "schema", "verdict", "fully_stable", "model_hash", "cq",
            "multipliers", "gssosc", "gusosc", "pvi_pointwise", "smooth_psd",
            "scoc_probe", "moduli", "violations", "violation_count",
            "localization", "notes", "options",
        ]:
            emit(key, data[key])
        return "\n".join(lines) + "\n"


def model_hash(model: ParametricModel) -> str:
    return hashlib.sha256(print_model(model).encode()).hexdigest()[:16]


def _max_independent_subset(grad_matrix: np.ndarray, candidates):
    """Greedy maximal independent subset of gradient rows (by index)."""
    chosen = []
    for i in candidates:
        rows = grad_matrix[chosen + [i]]
        s = np.linalg.svd(rows, compute_uv=False)
        if int(np.sum(s > 1e-10 * max(1.0, s[0]))) == len(chosen) + 1:
            chosen.append(i)
    return tuple(chosen)


def certify(model: ParametricModel, options: Optional[CertifyOptions] = None) -> StabilityReport:
    """Full pipeline; the headline verdict follows the characterization
    'under MFCQ + CRCQ, fully stable iff the sampled uniform second-order
    test passes', with the empirical harness as corroboration."""
    opts = options or CertifyOptions()
    ref = model.reference
    if ref is None:
        raise InputError("model file has no reference triple")
    notes = []
    mfcq = check_mfcq(model, ref.x, ref.p, opts.tol_act)
    licq = check_licq(model, ref.x, ref.p, opts.tol_act)
    crcq = probe_crcq(
        model, ref.x, ref.p, samples=max(10, opts.samples // 10), seed=opts.seed,
        tol_act=opts.tol_act,
    )
    cq = {
        "mfcq": mfcq.to_json_dict(),
        "licq": licq.to_json_dict(),
        "crcq": crcq.to_json_dict(),
    }
    base = dict(
        model_hash=model_hash(model),
        cq=cq,
        options=opts.to_json_dict(),
    )
    if not mfcq.ok:
        notes.append(
            "MFCQ fails at the reference: multiplier set may be unbounded; "
            "second-order checks refused"
        )
        try:
            multiplier_polytope(model, ref.x, ref.p, ref.v, opts.tol_act)
            multipliers = None
        except UnboundedMultiplierError as err:
            multipliers = {"unbounded": True, "recession": _jsonify(err.recession)}
        except NoMultiplierError:
            multipliers = {"empty": True}
        return StabilityReport(
            verdict="undetermined",
            fully_stable=None,
            multipliers=multipliers,
            gssosc=None,
            gusosc=None,
            pvi_pointwise=None,
            smooth_psd=None,
            scoc_probe=[],
            moduli=None,
            violations=[],
            violation_count=0,
            localization=None,
            notes=notes,
            **base,
        )

    ms = multiplier_polytope(model, ref.x, ref.p, ref.v, opts.tol_act)

    gssosc = check_gssosc(
        model, ref, multipliers=ms, tol_pd=opts.tol_pd,
        scan_random=opts.scan_random, seed=opts.seed,
    )
    gusosc = check_gusosc(
        model, ref, eta=opts.eta, samples=opts.samples,
        seed=opts.seed, tol_pd=opts.tol_pd, tol_act=opts.tol_act,
    )
    pvi = None
    if model.m == 0 or (all(model.affine_x) and all(model.param_free)):
        pvi = check_pvi_pointwise(model, ref, opts.tol_pd, opts.tol_act)
    smooth = check_smooth_psd(model, ref, opts.tol_pd) if model.m == 0 else None

    scoc = []
    for vert in ms.vertices:
        i_plus = strict_complement(vert, ms.active, opts.tol_cq)
        J = _max_independent_subset(ms.grad_matrix, list(i_plus)) if i_plus else ()
        scoc.append(scoc_probe(model, ref, vert, J))

    # ----- empirical harness
    localization = None
    moduli = None
    violations = []
    violation_count = 0
    harness_clean = None
    table = None
    try:
        table = build_localization(
            model, ref,
            rho_v=opts.rho_v, rho_p=opts.rho_p,
            grid_v=opts.grid_v, grid_p=opts.grid_p,
            n_random=opts.n_random, box_radius=opts.box_radius,
            seed=opts.seed, tol_act=opts.tol_act,
        )
        localization = dict(table.meta)
        localization["nodes"] = len(table)
        localization["single_valued"] = True
        fitted = fit_moduli(table, pair_cap=opts.pair_cap)
        moduli = fitted.to_json_dict()
        if fitted.ell_hat is not None:
            violations, violation_count = verify_inequality(
                table, fitted.kappa_used, fitted.ell_hat,
                fitted.exponent_used, pair_cap=opts.pair_cap,
            )
        else:
            violations, violation_count = verify_inequality(
                table, fitted.kappa_used, 0.0, fitted.exponent_used,
                pair_cap=opts.pair_cap,
            )
        harness_clean = (
            not fitted.kappa_flagged
            and fitted.ell_hat is not None
            and violation_count == 0
        )
    except LocalizationError as err:
        localization = {"single_valued": False, "witness": _jsonify(err.witness)}
        harness_clean = False
        notes.append(f"localization failed: {err}")

    # ----- headline verdict
    characterization_available = crcq.ok  # MFCQ already holds here
    conditions_stable = gusosc.ok
    if gssosc.ok and not gusosc.ok:
        verdict = "inconsistent"
        fully_stable = None
        notes.append(
            "implication chain broken: pointwise strict-complementarity test "
            "holds but the sampled uniform test fails"
        )
    elif not characterization_available:
        verdict = "undetermined"
        fully_stable = None
        notes.append(
            "CRCQ not corroborated: the uniform second-order test is no "
            "longer a characterization; empirical harness attached"
        )
    elif conditions_stable and harness_clean:
        verdict = "fully_stable"
        fully_stable = True
    elif not conditions_stable and not harness_clean:
        verdict = "not_fully_stable"
        fully_stable = False
    else:
        verdict = "inconsistent"
        fully_stable = None
        notes.append(
            "condition-based verdict and empirical harness disagree "
            f"(conditions_stable={conditions_stable}, harness_clean={harness_clean}); "
            "investigate tolerances or radii"
        )
    if gssosc.ok:
        notes.append("GSSOSC holds (sufficient for full stability)")
    elif conditions_stable:
        notes.append(
            "GSSOSC fails but the uniform test passes: consistent, the "
            "pointwise test is only sufficient"
        )
    if any(entry["zero"] for entry in scoc):
        notes.append(
            "coherent-orientation determinant probe found a zero determinant"
        )
    report = StabilityReport(
        verdict=verdict,
        fully_stable=fully_stable,
        multipliers=ms.to_json_dict(),
        gssosc=gssosc.to_json_dict(),
        gusosc=gusosc.to_json_dict(),
        pvi_pointwise=pvi.to_json_dict() if pvi else None,
        smooth_psd=smooth.to_json_dict() if smooth else None,
        scoc_probe=[_jsonify(s) for s in scoc],
        moduli=moduli,
        violations=[_jsonify(v) for v in violations],
        violation_count=violation_count,
        localization=_jsonify(localization),
        notes=notes,
        **base,
    )
    report._table = table
    return report
