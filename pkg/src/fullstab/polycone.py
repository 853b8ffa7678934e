"""Exact polyhedral cone geometry at desk scale.

Cones live in facet (H-) representation ``{w : E w = 0, G w <= 0}``; ray
generators are computed on demand by a double-description-style active-set
enumeration (n <= 8, <= 16 rows is the intended regime).  Tangent cones of
inequality systems are linearization cones: exact for constraints affine
in x, and exact under MFCQ otherwise (callers label them accordingly).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .defaults import MAX_CONE_ROWS, TOL_ACT, TOL_CONE
from .errors import (
    DeskScaleError,
    InfeasiblePointError,
    InfeasibleSetError,
    InputError,
)
from .modelspec import ParametricModel, eval_bundle

__all__ = [
    "ConeDesc",
    "SubspaceBasis",
    "active_set",
    "tangent_cone",
    "critical_cone",
    "polar_cone",
    "span_difference",
    "project_polyhedron",
    "nnls",
]

_RANK_TOL = 1e-10


class ConeDesc:
    """Closed convex polyhedral cone {w : E w = 0, G w <= 0}."""

    def __init__(self, n: int, E=None, G=None):
        self.n = n
        self.E = _as_matrix(E, n)
        self.G = _as_matrix(G, n)
        self.E.setflags(write=False)
        self.G.setflags(write=False)
        self._generators = None

    def __repr__(self):
        return f"ConeDesc(n={self.n}, eq={self.E.shape[0]}, ineq={self.G.shape[0]})"

    def contains(self, w, tol: float = TOL_CONE):
        """Membership test; accepts a single vector or a stack of rows."""
        w = np.asarray(w, dtype=float)
        single = w.ndim == 1
        W = w[None, :] if single else w
        scale = 1.0 + np.linalg.norm(W, axis=1)
        ok = np.ones(W.shape[0], dtype=bool)
        if self.E.shape[0]:
            ok &= np.max(np.abs(W @ self.E.T), axis=1) <= tol * scale
        if self.G.shape[0]:
            ok &= np.max(W @ self.G.T, axis=1) <= tol * scale
        return bool(ok[0]) if single else ok

    def generators(self):
        """(rays, lineality): unit extreme rays modulo lineality, and an
        orthonormal basis of the lineality space.  cone = cone(rays) +
        span(lineality)."""
        if self._generators is None:
            self._generators = _enumerate_generators(self)
        return self._generators

    @property
    def is_trivial(self) -> bool:
        rays, lin = self.generators()
        return rays.shape[0] == 0 and lin.shape[1] == 0

    def facets_csv(self) -> str:
        lines = []
        for row in self.E:
            lines.append("eq," + ",".join(repr(float(v)) for v in row))
        for row in self.G:
            lines.append("ineq," + ",".join(repr(float(v)) for v in row))
        return "\n".join(lines)

    def generators_csv(self) -> str:
        rays, lin = self.generators()
        lines = []
        for row in rays:
            lines.append("ray," + ",".join(repr(float(v)) for v in row))
        for col in lin.T:
            lines.append("line," + ",".join(repr(float(v)) for v in col))
        return "\n".join(lines)


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal columns spanning a subspace (k may be 0)."""

    V: np.ndarray  # (n, k)

    @property
    def dim(self) -> int:
        return self.V.shape[1]

    def __post_init__(self):
        V = self.V
        if V.shape[1] and not np.allclose(V.T @ V, np.eye(V.shape[1]), atol=1e-10):
            raise InputError("subspace basis is not orthonormal")


def _as_matrix(M, n) -> np.ndarray:
    if M is None:
        return np.zeros((0, n))
    M = np.array(M, dtype=float)
    if M.size == 0:
        return np.zeros((0, n))
    M = M.reshape(-1, n)
    if not np.all(np.isfinite(M)):
        raise InputError("cone description contains non-finite rows")
    return M


def _null_space(M: np.ndarray, n: int) -> np.ndarray:
    """Orthonormal basis of {w : M w = 0} as columns."""
    if M.shape[0] == 0:
        return np.eye(n)
    u, s, vt = np.linalg.svd(M, full_matrices=True)
    tol = max(M.shape) * _RANK_TOL * (s[0] if s.size else 1.0)
    rank = int(np.sum(s > tol))
    return vt[rank:].T


def _enumerate_generators(cone: ConeDesc):
    n = cone.n
    if cone.G.shape[0] > MAX_CONE_ROWS + 4:
        raise DeskScaleError(
            f"{cone.G.shape[0]} inequality rows exceed the enumeration cap"
        )
    stacked = np.vstack([cone.E, cone.G])
    lin = _null_space(stacked, n)
    dim_lin = lin.shape[1]
    rays = []
    kg = cone.G.shape[0]
    for r in range(kg + 1):
        for subset in itertools.combinations(range(kg), r):
            rows = np.vstack([cone.E, cone.G[list(subset)]]) if subset or cone.E.shape[0] else np.zeros((0, n))
            N = _null_space(rows, n)
            if N.shape[1] != dim_lin + 1:
                continue
            # direction orthogonal to the lineality space inside N
            if dim_lin:
                proj = N - lin @ (lin.T @ N)
            else:
                proj = N
            u, s, vt = np.linalg.svd(proj, full_matrices=False)
            if s.size == 0 or s[0] < 1e-9:
                continue
            direction = u[:, 0]
            for cand in (direction, -direction):
                if cone.contains(cand, tol=1e-9):
                    rays.append(cand / np.linalg.norm(cand))
    unique = []
    for ray in rays:
        if not any(np.linalg.norm(ray - r) < 1e-8 for r in unique):
            unique.append(ray)
    R = np.array(unique) if unique else np.zeros((0, n))
    return R, lin


# ---------------------------------------------------------------------------
# model-level cone builders


def active_set(model: ParametricModel, x, p, tol_act: float = TOL_ACT):
    """Indices (0-based, sorted) of constraints active at (x, p).

    The point must be feasible to ``tol_act``; reports use 1-based labels.
    """
    if model.m == 0:
        return ()
    bundle = eval_bundle(model, x, p)
    worst = float(np.max(bundle.phi)) if model.m else 0.0
    if worst > tol_act:
        raise InfeasiblePointError(
            f"point is infeasible: max phi = {worst:.3e} > {tol_act}"
        )
    return tuple(int(i) for i in np.flatnonzero(np.abs(bundle.phi) <= tol_act))


def tangent_cone(model: ParametricModel, x, p, I=None) -> ConeDesc:
    """Linearization cone {w : grad_x phi_i . w <= 0, i active}; exact for
    affine constraints, exact under MFCQ otherwise."""
    if I is None:
        I = active_set(model, x, p)
    bundle = eval_bundle(model, x, p)
    G = bundle.grad_phi[list(I)] if I else None
    return ConeDesc(model.n, E=None, G=G)


def critical_cone(T: ConeDesc, v_hat, tol: float = TOL_CONE) -> ConeDesc:
    """Tangent cone intersected with the hyperplane orthogonal to the normal
    vector v_hat; validates v_hat against the polar of T."""
    v = np.asarray([float(c) for c in v_hat], dtype=float)
    if v.shape != (T.n,):
        raise InputError("v_hat has wrong dimension")
    if np.linalg.norm(v) <= tol:
        return ConeDesc(T.n, E=T.E, G=T.G)
    rays, lin = T.generators()
    scale = 1.0 + float(np.linalg.norm(v))
    if rays.shape[0] and np.max(rays @ v) > tol * scale:
        raise InputError(
            "v_hat is not a normal vector at the reference point "
            "(inconsistent reference triple)"
        )
    if lin.shape[1] and np.max(np.abs(lin.T @ v)) > tol * scale:
        raise InputError(
            "v_hat is not a normal vector at the reference point "
            "(inconsistent reference triple)"
        )
    E = np.vstack([T.E, v[None, :]]) if T.E.shape[0] else v[None, :]
    return ConeDesc(T.n, E=E, G=T.G)


def polar_cone(K: ConeDesc) -> ConeDesc:
    """Polar {z : <z, w> <= 0 for all w in K} via generator/Farkas duality."""
    rays, lin = K.generators()
    E = lin.T if lin.shape[1] else None
    G = rays if rays.shape[0] else None
    return ConeDesc(K.n, E=E, G=G)


def span_difference(K: ConeDesc) -> SubspaceBasis:
    """Orthonormal basis of K - K = span(K), from the generators."""
    rays, lin = K.generators()
    stacked = np.vstack([rays, lin.T]) if rays.shape[0] or lin.shape[1] else np.zeros((0, K.n))
    if stacked.shape[0] == 0:
        return SubspaceBasis(V=np.zeros((K.n, 0)))
    u, s, vt = np.linalg.svd(stacked, full_matrices=False)
    tol = max(stacked.shape) * _RANK_TOL * s[0]
    rank = int(np.sum(s > tol))
    return SubspaceBasis(V=vt[:rank].T)


# ---------------------------------------------------------------------------
# Euclidean projection onto an affine-in-x constraint set


def polyhedron_rows(model: ParametricModel, p):
    """(A, b) with C(p) = {x : A x <= b}; requires affinity in x."""
    if not all(model.affine_x):
        raise InputError("projection requires constraints affine in x")
    zero_x = [0.0] * model.n
    bundle = eval_bundle(model, zero_x, [float(c) for c in p])
    A = bundle.grad_phi
    b = -bundle.phi
    return A, b


def project_polyhedron(model: ParametricModel, p, z, tol: float = TOL_CONE):
    """Euclidean projection of z onto C(p), by verified active-set
    enumeration: the first candidate passing the KKT test is the projection
    (the objective is strongly convex, so KKT is sufficient)."""
    A, b = polyhedron_rows(model, p)
    return project_onto_rows(A, b, np.asarray(z, dtype=float), tol)


def project_onto_rows(A: np.ndarray, b: np.ndarray, z: np.ndarray, tol: float = TOL_CONE):
    m = A.shape[0]
    if m > MAX_CONE_ROWS:
        raise DeskScaleError(f"{m} rows exceed the projection enumeration cap")
    scale = 1.0 + float(np.linalg.norm(z)) + (float(np.max(np.abs(b))) if m else 0.0)
    feas_tol = tol * scale
    if m == 0 or np.all(A @ z <= b + feas_tol):
        return z.copy()
    for r in range(1, m + 1):
        for subset in itertools.combinations(range(m), r):
            S = list(subset)
            AS = A[S]
            x = z - np.linalg.pinv(AS, rcond=1e-12) @ (AS @ z - b[S])
            if not np.all(A @ x <= b + feas_tol):
                continue
            resid = z - x
            mu, nn_res = nnls(AS.T, resid)
            if nn_res <= tol * scale + 1e-12:
                return x
    raise InfeasibleSetError("constraint set is empty (no projection exists)")


def nnls(A: np.ndarray, b: np.ndarray):
    """Lawson-Hanson nonnegative least squares: min ||A x - b||, x >= 0.

    Returns (x, residual_norm).  Deterministic; desk scale only.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = A.T @ (b - A @ x)
    tol = 1e-12 * (1 + float(np.linalg.norm(A.T @ b, ord=np.inf)) if n else 1.0)
    for _ in range(6 * max(n, 1) + 10):
        if passive.all() or (w[~passive] <= tol).all():
            break
        candidates = np.where(~passive, w, -np.inf)
        j = int(np.argmax(candidates))
        passive[j] = True
        while True:
            s = np.zeros(n)
            idx = np.flatnonzero(passive)
            sol, *_ = np.linalg.lstsq(A[:, idx], b, rcond=None)
            s[idx] = sol
            if (s[idx] > tol).all():
                x = s
                break
            neg = idx[s[idx] <= tol]
            with np.errstate(divide="ignore", invalid="ignore"):
                alphas = x[neg] / (x[neg] - s[neg])
            alpha = float(np.min(alphas)) if neg.size else 0.0
            x = x + alpha * (s - x)
            passive[np.abs(x) <= tol] = False
            x[~passive] = 0.0
            if not passive.any():
                x = np.zeros(n)
                break
        w = A.T @ (b - A @ x)
    return x, float(np.linalg.norm(A @ x - b))
