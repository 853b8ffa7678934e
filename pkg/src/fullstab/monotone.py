"""Sample-based local monotonicity estimation for operator graphs.

Estimators are corroborating, never certifying: the definitions quantify
over all graph pairs in a neighborhood, a sample can only bound them.
The strong-modulus estimate is the worst pairwise Rayleigh-type ratio;
the localization inequality check tests
``||(v1 - v2) - 2 kappa [theta(v1) - theta(v2)]|| <= ||v1 - v2|| + tol``
pair by pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .defaults import TOL_INEQ
from .errors import DegenerateSampleError, InconsistencyError, InputError

__all__ = [
    "GraphSample",
    "MonotonicityEstimate",
    "estimate_moduli",
    "check_localization_estimate",
    "estimate_from_inverse",
]

_DEGENERATE = 1e-12


@dataclass
class GraphSample:
    """Pairs (u_i, v_i) with v_i in T(u_i), inside a declared ball."""

    u: np.ndarray  # (N, n)
    v: np.ndarray  # (N, n)
    center_u: Optional[np.ndarray] = None
    center_v: Optional[np.ndarray] = None
    radius: Optional[float] = None

    def __post_init__(self):
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        if self.u.shape != self.v.shape or self.u.shape[0] == 0:
            raise InputError("graph sample needs matching nonempty u, v stacks")
        if self.radius is not None:
            cu = np.asarray(self.center_u, dtype=float)
            cv = np.asarray(self.center_v, dtype=float)
            du = np.linalg.norm(self.u - cu, axis=1)
            dv = np.linalg.norm(self.v - cv, axis=1)
            slack = 1e-12 * (1.0 + self.radius)
            if np.max(du) > self.radius + slack or np.max(dv) > self.radius + slack:
                raise InputError("sample pair outside the declared ball")

    def __len__(self):
        return self.u.shape[0]

    @classmethod
    def from_csv(cls, text: str, n: int) -> "GraphSample":
        """Columns u1..un, v1..vn; header optional; '#' comments."""
        rows = []
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [s.strip() for s in line.split(",")]
            if any(not _is_number(s) for s in parts):
                continue  # header
            if len(parts) != 2 * n:
                raise InputError(
                    f"CSV row has {len(parts)} columns, expected {2 * n}"
                )
            rows.append([float(s) for s in parts])
        if not rows:
            raise InputError("CSV contains no sample rows")
        data = np.array(rows)
        return cls(u=data[:, :n], v=data[:, n:])

    def inverse(self) -> "GraphSample":
        return GraphSample(u=self.v.copy(), v=self.u.copy())


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


@dataclass
class MonotonicityEstimate:
    kappa_hat: float  # strong modulus estimate (may be negative)
    r_hat: float  # hypomonotonicity constant max(0, -kappa_hat)
    witness: tuple  # (i, j) indices of the extremal pair
    pair_count: int
    details: dict = field(default_factory=dict)

    @property
    def monotone(self) -> bool:
        return self.kappa_hat >= -TOL_INEQ

    @property
    def strongly_monotone(self) -> bool:
        return self.kappa_hat > 0

    def to_json_dict(self):
        return {
            "kappa_hat": self.kappa_hat,
            "r_hat": self.r_hat,
            "witness_pair": list(self.witness),
            "pairs": self.pair_count,
            "verdict": f"corroborated on {self.pair_count} pairs",
        }


def _pair_ratios(u: np.ndarray, v: np.ndarray):
    """All unordered pair ratios <dv, du>/||du||^2 with degenerate pairs
    skipped.  Returns (ratios, index pairs)."""
    N = u.shape[0]
    ii, jj = np.triu_indices(N, k=1)
    du = u[ii] - u[jj]
    dv = v[ii] - v[jj]
    sq = np.einsum("ij,ij->i", du, du)
    keep = np.sqrt(sq) > _DEGENERATE
    ratios = np.einsum("ij,ij->i", dv[keep], du[keep]) / sq[keep]
    return ratios, ii[keep], jj[keep]


def estimate_moduli(sample: GraphSample) -> MonotonicityEstimate:
    """Worst-pair strong-monotonicity modulus over the sample.

    kappa_hat = min over unordered pairs of <v1-v2, u1-u2>/||u1-u2||^2;
    the witness pair reproduces the reported ratio exactly.
    """
    if len(sample) < 2:
        raise DegenerateSampleError("need at least 2 graph points")
    ratios, ii, jj = _pair_ratios(sample.u, sample.v)
    if ratios.size == 0:
        raise DegenerateSampleError("all pairs degenerate (coincident u's)")
    k = int(np.argmin(ratios))
    kappa = float(ratios[k])
    return MonotonicityEstimate(
        kappa_hat=kappa,
        r_hat=max(0.0, -kappa),
        witness=(int(ii[k]), int(jj[k])),
        pair_count=int(ratios.size),
    )


def check_localization_estimate(
    sample: GraphSample, kappa: float, tol: float = TOL_INEQ
):
    """Violations of the single-valued-localization inequality on an
    inverse-graph sample (v_i, theta(v_i)); u holds v, v holds theta(v).

    Empty result corroborates the inequality at level kappa.
    """
    if kappa <= 0:
        raise InputError("kappa must be positive")
    V = sample.u  # canonical parameters
    X = sample.v  # localization values theta(v)
    N = V.shape[0]
    ii, jj = np.triu_indices(N, k=1)
    dv = V[ii] - V[jj]
    dx = X[ii] - X[jj]
    lhs = np.linalg.norm(dv - 2.0 * kappa * dx, axis=1)
    rhs = np.linalg.norm(dv, axis=1) + tol
    bad = lhs > rhs
    return [
        {
            "pair": (int(ii[k]), int(jj[k])),
            "lhs": float(lhs[k]),
            "rhs": float(rhs[k]),
            "margin": float(lhs[k] - rhs[k]),
        }
        for k in np.flatnonzero(bad)
    ]


def estimate_from_inverse(sample: GraphSample, tol: float = TOL_INEQ) -> float:
    """Largest pairwise Lipschitz ratio of the localization and the
    consistency bound L_hat <= 1/kappa_hat (an identity at sample level
    when kappa_hat > 0; a violation is an internal bug, not data)."""
    V = sample.u
    X = sample.v
    N = V.shape[0]
    if N < 2:
        raise DegenerateSampleError("need at least 2 graph points")
    ii, jj = np.triu_indices(N, k=1)
    dv = np.linalg.norm(V[ii] - V[jj], axis=1)
    dx = np.linalg.norm(X[ii] - X[jj], axis=1)
    keep = dv > _DEGENERATE
    if not np.any(keep):
        raise DegenerateSampleError("all pairs degenerate (coincident v's)")
    L_hat = float(np.max(dx[keep] / dv[keep]))
    inv = estimate_moduli(GraphSample(u=X.copy(), v=V.copy()))
    if inv.kappa_hat > 0 and L_hat > 1.0 / inv.kappa_hat + tol:
        raise InconsistencyError(
            f"L_hat = {L_hat} exceeds 1/kappa_hat = {1.0 / inv.kappa_hat}"
        )
    return L_hat
