"""Constraint qualifications and the Lagrange multiplier polytope.

MFCQ is decided by a small LP (exact rational pivoting whenever the point
and model data are rational, so a zero margin is never a floating-point
artifact); LICQ by a singular-value rank check; CRCQ by a sampled probe
that can falsify or corroborate but never prove, except for jointly affine
data where gradients are constant.

The multiplier set Lambda(x, p, v) = {lam >= 0 : sum lam_i grad phi_i =
v - f(x, p), lam_i = 0 off the active set} is enumerated vertex by vertex
over independent column subsets.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .defaults import (
    CRCQ_RADIUS,
    CRCQ_SAMPLES,
    MAX_ACTIVE_SUBSETS,
    TOL_ACT,
    TOL_CONE,
    TOL_CQ,
)
from .errors import (
    DeskScaleError,
    NoMultiplierError,
    UnboundedMultiplierError,
)
from .modelspec import ParametricModel, eval_bundle, eval_bundle_exact
from .polycone import active_set, nnls
from .simplex import solve_inequality_lp, solve_standard_lp

__all__ = [
    "CQReport",
    "MultiplierSet",
    "check_mfcq",
    "check_licq",
    "probe_crcq",
    "multiplier_polytope",
    "strict_complement",
]


@dataclass
class CQReport:
    cq: str  # 'MFCQ' | 'LICQ' | 'CRCQ'
    verdict: str  # 'holds' | 'fails' | 'corroborated'
    witness: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.verdict in ("holds", "corroborated")

    def to_json_dict(self):
        return {"cq": self.cq, "verdict": self.verdict, "witness": _jsonify(self.witness)}


def _jsonify(obj):
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    return obj


def _is_rational_point(*vectors) -> bool:
    return all(
        isinstance(c, (int, Fraction)) for vec in vectors for c in vec
    )


# ---------------------------------------------------------------------------
# MFCQ


def check_mfcq(model: ParametricModel, x, p, tol_act: float = TOL_ACT, tol_cq: float = TOL_CQ) -> CQReport:
    """Partial MFCQ in x: exists d with <grad phi_i, d> < 0 on the active
    set.  Decided by maximizing the margin t over the sup-norm ball."""
    I = active_set(model, x, p, tol_act)
    if not I:
        # +inf sentinel: the condition is vacuous with no active gradients
        return CQReport(
            "MFCQ", "holds", {"active_set": [], "t_star": float("inf"), "vacuous": True}
        )
    exact = _is_rational_point(x, p)
    if exact:
        bundle = eval_bundle_exact(model, list(x), list(p))
        grads = [bundle.grad_phi[i] for i in I]
        # float-valued model constants degrade the run to float mode
        exact = _is_rational_point(*grads)
    if not exact:
        bundle = eval_bundle(model, x, p)
        grads = [list(map(float, bundle.grad_phi[i])) for i in I]
    n = model.n
    one = Fraction(1) if exact else 1.0
    zero = Fraction(0) if exact else 0.0
    t_upper = max(sum(abs(g) for g in row) for row in grads) + one
    # variables (d, t): maximize t s.t. g_i . d + t <= 0, |d| <= 1, 0 <= t
    A_ub = [list(row) + [one] for row in grads]
    b_ub = [zero] * len(grads)
    c = [zero] * n + [one]
    lower = [-one] * n + [zero]
    upper = [one] * n + [t_upper]
    res = solve_inequality_lp(c, A_ub, b_ub, lower, upper, maximize=True)
    if res.status != "optimal":  # pragma: no cover - always feasible (d=0,t=0)
        raise RuntimeError(f"MFCQ LP unexpectedly {res.status}")
    t_star = res.x[n]
    d = res.x[:n]
    holds = (t_star > 0) if exact else (float(t_star) > tol_cq)
    witness = {
        "active_set": [i + 1 for i in I],
        "t_star": float(t_star),
        "direction": [float(v) for v in d],
        "exact": exact,
    }
    return CQReport("MFCQ", "holds" if holds else "fails", witness)


# ---------------------------------------------------------------------------
# LICQ


def check_licq(model: ParametricModel, x, p, tol_act: float = TOL_ACT) -> CQReport:
    I = active_set(model, x, p, tol_act)
    if not I:
        return CQReport("LICQ", "holds", {"active_set": [], "rank": 0, "vacuous": True})
    bundle = eval_bundle(model, x, p)
    Gact = bundle.grad_phi[list(I)]
    s = np.linalg.svd(Gact, compute_uv=False)
    threshold = 1e-8 * (s[0] if s.size and s[0] > 0 else 1.0)
    rank = int(np.sum(s > threshold))
    witness = {
        "active_set": [i + 1 for i in I],
        "rank": rank,
        "count": len(I),
        "singular_values": [float(v) for v in s],
    }
    return CQReport("LICQ", "holds" if rank == len(I) else "fails", witness)


# ---------------------------------------------------------------------------
# CRCQ probe


def _rank(rows: np.ndarray) -> int:
    if rows.size == 0:
        return 0
    s = np.linalg.svd(rows, compute_uv=False)
    threshold = max(rows.shape) * 1e-10 * (s[0] if s[0] > 0 else 1.0)
    return int(np.sum(s > threshold))


def probe_crcq(
    model: ParametricModel,
    x,
    p,
    radius: float = CRCQ_RADIUS,
    samples: int = CRCQ_SAMPLES,
    seed: int = 0,
    tol_act: float = TOL_ACT,
) -> CQReport:
    """Partial CRCQ in x: every active-gradient subfamily keeps constant
    rank on a neighborhood of (x, p).

    Jointly affine constraints have constant gradients, so the verdict is
    upgraded to 'holds'; otherwise the probe samples the neighborhood and
    can only report 'corroborated' or 'fails' (with a witness subset and
    point).
    """
    if radius <= 0 or samples < 1:
        raise ValueError("probe needs radius > 0 and samples >= 1")
    I = active_set(model, x, p, tol_act)
    if not I:
        return CQReport("CRCQ", "holds", {"active_set": [], "vacuous": True})
    if len(I) > MAX_ACTIVE_SUBSETS:
        raise DeskScaleError(
            f"active set of size {len(I)} exceeds the subset-enumeration cap"
        )
    if all(model.affine_xp[i] for i in I):
        return CQReport(
            "CRCQ", "holds", {"active_set": [i + 1 for i in I], "affine": True}
        )
    x0 = np.array([float(c) for c in x])
    p0 = np.array([float(c) for c in p])
    rng = np.random.default_rng(seed)
    points = [(x0, p0)]
    for _ in range(samples):
        dx = rng.normal(size=model.n)
        dp = rng.normal(size=model.d) if model.d else np.zeros(0)
        norm = np.linalg.norm(np.concatenate([dx, dp]))
        if norm > 0:
            shift = radius * rng.uniform() / norm
            points.append((x0 + shift * dx, p0 + shift * dp))
    grads = [eval_bundle(model, xx, pp).grad_phi for xx, pp in points]
    subsets = []
    for r in range(1, len(I) + 1):
        subsets.extend(itertools.combinations(I, r))
    for subset in subsets:
        base_rank = _rank(grads[0][list(subset)])
        for k in range(1, len(points)):
            rank_k = _rank(grads[k][list(subset)])
            if rank_k != base_rank:
                xx, pp = points[k]
                return CQReport(
                    "CRCQ",
                    "fails",
                    {
                        "active_set": [i + 1 for i in I],
                        "subset": [i + 1 for i in subset],
                        "rank_at_center": base_rank,
                        "rank_at_witness": rank_k,
                        "witness_x": [float(v) for v in xx],
                        "witness_p": [float(v) for v in pp],
                    },
                )
    return CQReport(
        "CRCQ",
        "corroborated",
        {"active_set": [i + 1 for i in I], "samples": samples, "radius": radius},
    )


# ---------------------------------------------------------------------------
# multiplier polytope


@dataclass
class MultiplierSet:
    """Lambda(x, p, v) with enumerated vertices (full-length m vectors)."""

    m: int
    active: tuple
    vertices: list  # list of tuples (Fraction or float entries)
    dim: int
    exact: bool
    stationarity_rhs: list  # v - f(x, p)
    grad_matrix: np.ndarray  # (m, n) float gradients for re-verification

    @property
    def is_singleton(self) -> bool:
        return len(self.vertices) == 1

    def vertices_float(self) -> np.ndarray:
        return np.array([[float(c) for c in vert] for vert in self.vertices])

    def edge_midpoints(self) -> list:
        mids = []
        for a, b in itertools.combinations(self.vertices, 2):
            mids.append(tuple((ca + cb) / 2 for ca, cb in zip(a, b)))
        return mids

    def sample_points(self, count: int, seed: int = 0) -> list:
        """Random convex combinations of the vertices (deterministic)."""
        if len(self.vertices) == 1 or count <= 0:
            return []
        rng = np.random.default_rng(seed)
        V = self.vertices_float()
        weights = rng.dirichlet(np.ones(len(self.vertices)), size=count)
        return [tuple(map(float, w @ V)) for w in weights]

    def to_json_dict(self):
        return {
            "active_set": [i + 1 for i in self.active],
            "vertices": [[_jsonify(c) for c in v] for v in self.vertices],
            "dim": self.dim,
            "exact": self.exact,
        }


def multiplier_polytope(
    model: ParametricModel,
    x,
    p,
    v,
    tol_act: float = TOL_ACT,
    tol: float = TOL_CONE,
    require_mfcq: bool = True,
) -> MultiplierSet:
    """Enumerate the vertices of Lambda(x, p, v).

    Raises :class:`NoMultiplierError` when no multiplier exists (the triple
    is not on the solution-map graph) and
    :class:`UnboundedMultiplierError` with a recession direction when MFCQ
    fails and the set is unbounded.
    """
    I = active_set(model, x, p, tol_act)
    exact = _is_rational_point(x, p, v)
    if exact:
        bundle = eval_bundle_exact(model, list(x), list(p))
        # float-valued model constants degrade the run to float mode
        exact = _is_rational_point(bundle.f, *(bundle.grad_phi or [()]))
    if exact:
        cols = [[bundle.grad_phi[i][j] for j in range(model.n)] for i in I]
        rhs = [Fraction(vi) - fi for vi, fi in zip(v, bundle.f)]
        grad_matrix = np.array(
            [[float(g) for g in row] for row in bundle.grad_phi]
        ).reshape(model.m, model.n)
    else:
        fb = eval_bundle(model, x, p)
        cols = [list(map(float, fb.grad_phi[i])) for i in I]
        rhs = [float(vi) - fi for vi, fi in zip(v, fb.f)]
        grad_matrix = fb.grad_phi
    scale = 1.0 + max((abs(float(r)) for r in rhs), default=0.0)

    if not I:
        if max((abs(float(r)) for r in rhs), default=0.0) > tol * scale:
            raise NoMultiplierError(
                "no multiplier exists: v != f(x, p) at an interior point"
            )
        zero = Fraction(0) if exact else 0.0
        return MultiplierSet(
            m=model.m,
            active=(),
            vertices=[tuple([zero] * model.m)],
            dim=0,
            exact=exact,
            stationarity_rhs=rhs,
            grad_matrix=grad_matrix,
        )

    if require_mfcq:
        mfcq = check_mfcq(model, x, p, tol_act)
        if not mfcq.ok:
            ray = _recession_direction(cols, model.m, I, exact)
            raise UnboundedMultiplierError(
                "MFCQ fails: the multiplier set may be empty or unbounded; "
                "second-order checks are refused",
                recession=ray,
            )

    feasible = _stationarity_feasible(cols, rhs, tol * scale, exact)
    if not feasible:
        raise NoMultiplierError(
            "no multiplier exists: v is not in Psi(x, p); the reference "
            "triple is not on the solution-map graph"
        )

    vertices = _enumerate_vertices(cols, rhs, model.m, I, exact, tol * scale)
    if not vertices:  # pragma: no cover - guarded by feasibility above
        raise NoMultiplierError("vertex enumeration found no feasible basis")
    V = np.array([[float(c) for c in vert] for vert in vertices])
    dim = _rank(V - V[0]) if len(vertices) > 1 else 0
    return MultiplierSet(
        m=model.m,
        active=I,
        vertices=vertices,
        dim=dim,
        exact=exact,
        stationarity_rhs=rhs,
        grad_matrix=grad_matrix,
    )


def _stationarity_feasible(cols, rhs, tol, exact) -> bool:
    if exact:
        zero = [Fraction(0)] * len(cols)
        A = [[cols[j][i] for j in range(len(cols))] for i in range(len(rhs))]
        res = solve_standard_lp(zero, A, list(rhs))
        return res.status == "optimal"
    A = np.array(cols, dtype=float).T if cols else np.zeros((len(rhs), 0))
    _, resid = nnls(A, np.array(rhs, dtype=float))
    return resid <= max(tol, 1e-10)


def _recession_direction(cols, m, I, exact):
    """Nonzero lam >= 0 with sum lam_i g_i = 0, or None."""
    k = len(cols)
    if k == 0:
        return None
    one = Fraction(1) if exact else 1.0
    zero = Fraction(0) if exact else 0.0
    nrows = len(cols[0])
    A_ub = [[cols[j][i] for j in range(k)] for i in range(nrows)]
    A_ub += [[-cols[j][i] for j in range(k)] for i in range(nrows)]
    b_ub = [zero] * (2 * nrows)
    res = solve_inequality_lp(
        [one] * k, A_ub, b_ub, [zero] * k, [one] * k, maximize=True
    )
    if res.status != "optimal" or float(res.value) <= 1e-9:
        return None
    lam = [0.0] * m
    for idx, i in enumerate(I):
        lam[i] = float(res.x[idx])
    return lam


def _enumerate_vertices(cols, rhs, m, I, exact, tol):
    k = len(cols)
    n = len(rhs)
    found = []
    max_support = min(k, n)
    for r in range(0, max_support + 1):
        for subset in itertools.combinations(range(k), r):
            sol = _solve_subset(cols, rhs, subset, exact, tol)
            if sol is None:
                continue
            lam = [Fraction(0) if exact else 0.0] * m
            ok = True
            for pos, j in enumerate(subset):
                value = sol[pos]
                if exact:
                    if value < 0:
                        ok = False
                        break
                else:
                    if value < -1e-12:
                        ok = False
                        break
                    value = max(value, 0.0)
                lam[I[j]] = value
            if ok:
                found.append(tuple(lam))
    # dedupe, deterministic order
    unique = []
    for lam in sorted(found, key=lambda t: [float(c) for c in t]):
        if not any(
            max(abs(float(a) - float(b)) for a, b in zip(lam, other)) < 1e-8
            for other in unique
        ):
            unique.append(lam)
    return unique


def _solve_subset(cols, rhs, subset, exact, tol):
    """Solve sum_{j in subset} lam_j col_j = rhs for independent columns;
    None when dependent or inconsistent."""
    if not subset:
        if exact:
            return [] if all(r == 0 for r in rhs) else None
        return [] if max((abs(r) for r in rhs), default=0.0) <= tol else None
    if exact:
        return _exact_solve([[cols[j][i] for j in subset] for i in range(len(rhs))], list(rhs))
    A = np.array([cols[j] for j in subset], dtype=float).T
    if _rank(A.T) < len(subset):
        return None
    sol, res, rank, sv = np.linalg.lstsq(A, np.array(rhs, dtype=float), rcond=None)
    if np.linalg.norm(A @ sol - np.array(rhs, dtype=float)) > tol:
        return None
    return list(sol)


def _exact_solve(A, b):
    """Gaussian elimination over Fractions; None if the columns are
    dependent or the system inconsistent."""
    nrows = len(A)
    ncols = len(A[0]) if nrows else 0
    M = [[Fraction(A[i][j]) for j in range(ncols)] + [Fraction(b[i])] for i in range(nrows)]
    pivots = []
    row = 0
    for col in range(ncols):
        pivot_row = next((r for r in range(row, nrows) if M[r][col] != 0), None)
        if pivot_row is None:
            return None  # dependent columns
        M[row], M[pivot_row] = M[pivot_row], M[row]
        pivot = M[row][col]
        M[row] = [v / pivot for v in M[row]]
        for r in range(nrows):
            if r != row and M[r][col] != 0:
                factor = M[r][col]
                M[r] = [v - factor * w for v, w in zip(M[r], M[row])]
        pivots.append(col)
        row += 1
        if row == nrows:
            break
    if row < ncols:
        return None
    for r in range(row, nrows):
        if M[r][-1] != 0:
            return None  # inconsistent
    return [M[r][-1] for r in range(ncols)]


def strict_complement(lam: Sequence, I: Sequence[int], tol_cq: float = TOL_CQ):
    """Strongly active indices I_+ = {i in I : lam_i > tol} (0-based)."""
    return tuple(i for i in I if float(lam[i]) > tol_cq)
