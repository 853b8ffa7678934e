"""Solvers for the perturbed variational condition and the localization
table they produce.

Two independent routes at desk scale:

* ``solve_projected`` - the classical fixed-point reformulation
  x = Proj_{C(p)}(x - gamma (f(x, p) - v)), contraction for
  gamma < 2 kappa / L^2 under strong monotonicity (checked empirically,
  with step halving on divergence);
* ``solve_faces`` - exhaustive enumeration of candidate active sets,
  solving each stationarity-plus-equality system and filtering by sign
  and feasibility.  This is the uniqueness oracle: a fixed-point solver
  cannot certify single-valuedness, enumeration over a box can.

``build_localization`` tabulates the solution map on a tensor grid around
the reference (plus random interior nodes), aborting with a witness when
any node admits zero or several solutions in the box even after halving
the radii.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .defaults import (
    BOX_RADIUS,
    GRID_P,
    GRID_V,
    MAX_CONE_ROWS,
    MAX_SHRINK,
    RANDOM_NODES,
    RHO_P,
    RHO_V,
    SEED,
    TOL_ACT,
)
from .errors import (
    DeskScaleError,
    LocalizationError,
)
from .modelspec import ParametricModel, ReferenceTriple, eval_bundle
from .polycone import polyhedron_rows, project_onto_rows

__all__ = [
    "SolveOutcome",
    "LocalizationTable",
    "solve_projected",
    "solve_faces",
    "build_localization",
]


@dataclass
class SolveOutcome:
    x: np.ndarray
    lam: np.ndarray  # full-length multipliers (zeros off the active guess)
    residual: float
    iterations: int
    method: str  # 'projected-iteration' | 'face-enumeration'
    converged: bool
    multiplicity: str = "unknown"  # 'unique-in-box' | 'multiple-found' | 'unknown'

    def to_json_dict(self):
        return {
            "x": [float(c) for c in self.x],
            "lambda": [float(c) for c in self.lam],
            "residual": self.residual,
            "iterations": self.iterations,
            "method": self.method,
            "converged": self.converged,
            "multiplicity": self.multiplicity,
        }


# ---------------------------------------------------------------------------
# projected fixed-point iteration


def solve_projected(
    model: ParametricModel,
    v,
    p,
    x0,
    gamma: Optional[float] = None,
    moduli: Optional[tuple] = None,
    max_iter: int = 5000,
    tol: float = 1e-11,
) -> SolveOutcome:
    """Fixed-point iteration x <- Proj_{C(p)}(x - gamma (f(x, p) - v)).

    gamma defaults to 0.9 kappa / L^2 when (kappa, L) estimates are given,
    else 1e-2; it halves (at most 6 times) when the residual diverges.
    The iteration step norm *is* the fixed-point residual at the current
    iterate, which the returned outcome reports.
    """
    v = np.asarray(v, dtype=float)
    p = np.asarray(p, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    if gamma is None:
        if moduli is not None and moduli[0] > 0 and moduli[1] > 0:
            gamma = 0.9 * moduli[0] / moduli[1] ** 2
        else:
            gamma = 1e-2
    if model.m:
        A, b = polyhedron_rows(model, p)
    else:
        A = np.zeros((0, model.n))
        b = np.zeros(0)

    def step(xc):
        f = np.array([float(c) for c in model.f_values(list(xc), list(p))])
        target = xc - gamma * (f - v)
        return project_onto_rows(A, b, target) if model.m else target

    halvings = 0
    best_resid = math.inf
    stall = 0
    iterations = 0
    for it in range(1, max_iter + 1):
        iterations = it
        x_next = step(x)
        resid = float(np.linalg.norm(x_next - x))
        x = x_next
        if resid < tol * (1.0 + float(np.linalg.norm(x))):
            return SolveOutcome(
                x=x, lam=np.zeros(model.m), residual=resid,
                iterations=it, method="projected-iteration", converged=True,
            )
        if not np.all(np.isfinite(x)) or resid > 1e6:
            halvings += 1
            if halvings > MAX_SHRINK:
                break
            gamma *= 0.5
            x = np.asarray(x0, dtype=float).copy()
            best_resid = math.inf
            stall = 0
            continue
        if resid < best_resid * (1 - 1e-12):
            best_resid = resid
            stall = 0
        else:
            stall += 1
            if stall > 200:
                halvings += 1
                if halvings > MAX_SHRINK:
                    break
                gamma *= 0.5
                x = np.asarray(x0, dtype=float).copy()
                best_resid = math.inf
                stall = 0
    final = step(x)
    resid = float(np.linalg.norm(final - x))
    return SolveOutcome(
        x=x, lam=np.zeros(model.m), residual=resid,
        iterations=iterations, method="projected-iteration", converged=False,
    )


# ---------------------------------------------------------------------------
# face enumeration


def _affine_face_data(model: ParametricModel, p):
    """Per-parameter affine data: f(x, p) = f0 + Jf x, phi_i = g_i . x + c_i."""
    p = [float(c) for c in p]
    bundle = eval_bundle(model, [0.0] * model.n, p)
    return bundle.f, bundle.jac_f, bundle.grad_phi, bundle.phi


def _solve_face_affine(f0, Jf, G, c, v, J, n):
    """Linear stationarity system for one active-set guess J."""
    k = len(J)
    size = n + k
    M = np.zeros((size, size))
    M[:n, :n] = Jf
    rhs = np.zeros(size)
    rhs[:n] = v - f0
    for idx, i in enumerate(J):
        M[:n, n + idx] = G[i]
        M[n + idx, :n] = G[i]
        rhs[n + idx] = -c[i]
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    if np.linalg.norm(M @ sol - rhs) > 1e-9 * (1 + np.linalg.norm(rhs)):
        return None
    return sol


def _solve_face_newton(model, v, p, J, x_start, max_iter=60):
    n = model.n
    k = len(J)
    z = np.concatenate([x_start, np.ones(k)])
    v = np.asarray(v, dtype=float)
    for it in range(max_iter):
        x = z[:n]
        lam_j = z[n:]
        bundle = eval_bundle(model, x, [float(c) for c in p])
        F = np.zeros(n + k)
        F[:n] = bundle.f - v
        JL = bundle.jac_f.copy()
        for idx, i in enumerate(J):
            F[:n] += lam_j[idx] * bundle.grad_phi[i]
            F[n + idx] = bundle.phi[i]
            JL += lam_j[idx] * bundle.hess_phi[i]
        if np.linalg.norm(F) < 1e-12 * (1 + np.linalg.norm(v)):
            return z
        Jmat = np.zeros((n + k, n + k))
        Jmat[:n, :n] = JL
        for idx, i in enumerate(J):
            Jmat[:n, n + idx] = bundle.grad_phi[i]
            Jmat[n + idx, :n] = bundle.grad_phi[i]
        try:
            delta = np.linalg.solve(Jmat, -F)
        except np.linalg.LinAlgError:
            return None
        z = z + delta
        if not np.all(np.isfinite(z)) or np.linalg.norm(z) > 1e6:
            return None
    return None


def _kkt_residual(model, x, lam, v, p):
    bundle = eval_bundle(model, x, [float(c) for c in p])
    stat = bundle.f - np.asarray(v, dtype=float)
    if model.m:
        stat = stat + bundle.grad_phi.T @ lam
    feas = float(np.max(np.clip(bundle.phi, 0.0, None))) if model.m else 0.0
    comp = float(np.max(np.abs(lam * bundle.phi))) if model.m else 0.0
    return float(np.linalg.norm(stat)) + feas + comp


def solve_faces(
    model: ParametricModel,
    v,
    p,
    box_center=None,
    box_radius: float = BOX_RADIUS,
    tol_act: float = TOL_ACT,
) -> list:
    """All solutions of v in f(x, p) + N_{C(p)}(x) inside the sup-norm box,
    by enumerating active-set guesses J, solving the stationarity system
    with phi_J = 0 and filtering lam >= 0, phi <= 0 off J.  Duplicate x's
    from different guesses are merged.  Deterministic order."""
    if model.m > MAX_CONE_ROWS:
        raise DeskScaleError(f"m = {model.m} exceeds the face-enumeration cap")
    v = np.asarray(v, dtype=float)
    p = np.asarray(p, dtype=float)
    n = model.n
    center = (
        np.asarray(box_center, dtype=float)
        if box_center is not None
        else (model.reference.as_arrays()[0] if model.reference else np.zeros(n))
    )
    affine = (model.m == 0 or all(model.affine_x)) and model.f_affine
    if affine:
        f0, Jf, G, c = _affine_face_data(model, p)
    else:
        starts = _newton_starts(center, box_radius, n)
    solutions = []
    for r in range(model.m + 1):
        for J in itertools.combinations(range(model.m), r):
            if affine:
                sols = [_solve_face_affine(f0, Jf, G, c, v, J, n)]
            else:
                sols = [_solve_face_newton(model, v, p, J, s) for s in starts]
            for sol in sols:
                if sol is None:
                    continue
                _collect_face_solution(
                    model, sol, J, v, p, center, box_radius, tol_act, solutions
                )
    merged = _merge_solutions(solutions)
    multiplicity = "unique-in-box" if len(merged) == 1 else (
        "multiple-found" if merged else "unknown"
    )
    return [
        SolveOutcome(
            x=x, lam=lam, residual=resid, iterations=0,
            method="face-enumeration", converged=True, multiplicity=multiplicity,
        )
        for x, lam, resid in merged
    ]


def _newton_starts(center, box_radius, n):
    """Deterministic multi-start stencil: center, box-axis points, and a
    few seeded interior draws, so distinct roots per face are all seen."""
    starts = [center.copy()]
    for i in range(n):
        for sign in (1.0, -1.0):
            s = center.copy()
            s[i] += sign * box_radius
            starts.append(s)
    rng = np.random.default_rng(12345)
    for _ in range(4):
        starts.append(center + box_radius * rng.uniform(-1, 1, size=n))
    return starts


def _collect_face_solution(model, sol, J, v, p, center, box_radius, tol_act, out):
    n = model.n
    x = sol[:n]
    lam = np.zeros(model.m)
    lam[list(J)] = sol[n:]
    if model.m and np.min(lam) < -1e-9:
        return
    lam = np.clip(lam, 0.0, None)
    if model.m:
        phi = np.array([float(c) for c in model.phi_values(list(x), list(p))])
        if np.max(phi) > tol_act:
            return
    if np.max(np.abs(x - center)) > box_radius + 1e-12:
        return
    resid = _kkt_residual(model, x, lam, v, p)
    if resid > 1e-8 * (1 + np.linalg.norm(v)):
        return
    out.append((x, lam, resid))


def _merge_solutions(solutions):
    merged = []
    for x, lam, resid in solutions:
        dup = False
        for prev in merged:
            if np.max(np.abs(prev[0] - x)) < 1e-7:
                dup = True
                if resid < prev[2]:
                    prev[0], prev[1], prev[2] = x, lam, resid
                break
        if not dup:
            merged.append([x, lam, resid])
    merged.sort(key=lambda t: tuple(np.round(t[0], 12)))
    return merged


# ---------------------------------------------------------------------------
# localization table


@dataclass
class LocalizationTable:
    v_nodes: np.ndarray  # (N, n)
    p_nodes: np.ndarray  # (N, d)
    x_values: np.ndarray  # (N, n)
    residuals: np.ndarray  # (N,)
    methods: list
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.v_nodes.shape[0]

    def to_csv(self) -> str:
        n = self.v_nodes.shape[1]
        d = self.p_nodes.shape[1]
        header = (
            [f"v{i + 1}" for i in range(n)]
            + [f"p{i + 1}" for i in range(d)]
            + [f"x{i + 1}" for i in range(n)]
            + ["residual", "method"]
        )
        lines = [",".join(header)]
        for k in range(len(self)):
            row = (
                [repr(float(c)) for c in self.v_nodes[k]]
                + [repr(float(c)) for c in self.p_nodes[k]]
                + [repr(float(c)) for c in self.x_values[k]]
                + [repr(float(self.residuals[k])), self.methods[k]]
            )
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def _grid_nodes(ref_v, ref_p, rho_v, rho_p, grid_v, grid_p, n, d, n_random, seed):
    axes_v = [np.linspace(c - rho_v, c + rho_v, grid_v) for c in ref_v]
    v_mesh = (
        np.stack([g.ravel() for g in np.meshgrid(*axes_v, indexing="ij")], axis=1)
        if n
        else np.zeros((1, 0))
    )
    if d:
        axes_p = [np.linspace(c - rho_p, c + rho_p, grid_p) for c in ref_p]
        p_mesh = np.stack(
            [g.ravel() for g in np.meshgrid(*axes_p, indexing="ij")], axis=1
        )
    else:
        p_mesh = np.zeros((1, 0))
    V = np.repeat(v_mesh, p_mesh.shape[0], axis=0)
    P = np.tile(p_mesh, (v_mesh.shape[0], 1))
    rng = np.random.default_rng(seed)
    if n_random:
        Vr = ref_v + rho_v * rng.uniform(-1, 1, size=(n_random, n))
        Pr = (
            ref_p + rho_p * rng.uniform(-1, 1, size=(n_random, d))
            if d
            else np.zeros((n_random, 0))
        )
        V = np.vstack([V, Vr])
        P = np.vstack([P, Pr])
    return V, P


def _batched_affine_solutions(model, V, P, center, box_radius, tol_act):
    """Fast path: the full face sweep vectorized over all nodes when both
    the base map and the constraint gradients are constant (jointly affine
    model data)."""
    n, m = model.n, model.m
    f0_ref, Jf, G, c_ref = _affine_face_data(model, [0.0] * model.d)
    # f(0, p) and phi(0, p) are affine in p: evaluate basis offsets
    Fp = np.zeros((n, model.d))
    Cp = np.zeros((m, model.d))
    for l in range(model.d):
        e = [0.0] * model.d
        e[l] = 1.0
        bundle = eval_bundle(model, [0.0] * n, e)
        Fp[:, l] = bundle.f - f0_ref
        Cp[:, l] = bundle.phi - c_ref
    N = V.shape[0]
    f0_all = f0_ref[None, :] + P @ Fp.T
    c_all = c_ref[None, :] + P @ Cp.T if m else np.zeros((N, 0))
    found = [[] for _ in range(N)]
    for r in range(m + 1):
        for J in itertools.combinations(range(m), r):
            k = len(J)
            size = n + k
            M = np.zeros((size, size))
            M[:n, :n] = Jf
            for idx, i in enumerate(J):
                M[:n, n + idx] = G[i]
                M[n + idx, :n] = G[i]
            rhs = np.zeros((N, size))
            rhs[:, :n] = V - f0_all
            for idx, i in enumerate(J):
                rhs[:, n + idx] = -c_all[:, i]
            sol, *_ = np.linalg.lstsq(M, rhs.T, rcond=None)
            sol = sol.T
            ok = (
                np.linalg.norm(rhs - sol @ M.T, axis=1)
                <= 1e-9 * (1 + np.linalg.norm(rhs, axis=1))
            )
            X = sol[:, :n]
            lam_j = sol[:, n:]
            if k:
                ok &= np.min(lam_j, axis=1) >= -1e-9
            phi_all = X @ G.T + c_all if m else np.zeros((N, 0))
            if m:
                ok &= np.max(phi_all, axis=1) <= tol_act
            ok &= np.max(np.abs(X - center[None, :]), axis=1) <= box_radius + 1e-12
            for idx in np.flatnonzero(ok):
                lam = np.zeros(m)
                lam[list(J)] = np.clip(lam_j[idx], 0.0, None)
                found[idx].append((X[idx], lam))
    return found


def build_localization(
    model: ParametricModel,
    ref: ReferenceTriple,
    rho_v: float = RHO_V,
    rho_p: float = RHO_P,
    grid_v: int = GRID_V,
    grid_p: int = GRID_P,
    n_random: int = RANDOM_NODES,
    box_radius: float = BOX_RADIUS,
    seed: int = SEED,
    tol_act: float = TOL_ACT,
    cross_checks: int = 10,
) -> LocalizationTable:
    """Tabulate the single-valued localization on a tensor grid plus random
    interior nodes; radii halve (at most 6 times) when single-valuedness
    fails, and a LocalizationError with the witness node is raised when it
    keeps failing."""
    x0, p0, v0 = ref.as_arrays()
    n, d = model.n, model.d
    if grid_v**n * max(1, grid_p**d) > 100_000:
        raise DeskScaleError("localization grid too large; lower the grid sizes")
    attempt_rho_v, attempt_rho_p = rho_v, rho_p
    last_witness = None
    for shrink in range(MAX_SHRINK + 1):
        V, P = _grid_nodes(
            v0, p0, attempt_rho_v, attempt_rho_p, grid_v, grid_p, n, d, n_random, seed
        )
        affine = (model.m == 0 or all(model.affine_joint)) and model.f_affine
        table_x = np.zeros((V.shape[0], n))
        resids = np.zeros(V.shape[0])
        methods = []
        ok = True
        if affine:
            found = _batched_affine_solutions(model, V, P, x0, box_radius, tol_act)
            for k, candidates in enumerate(found):
                merged = []
                for x, lam in candidates:
                    if not any(np.max(np.abs(x - mx)) < 1e-7 for mx, _ in merged):
                        merged.append((x, lam))
                if len(merged) != 1:
                    ok = False
                    last_witness = {
                        "v": V[k].tolist(),
                        "p": P[k].tolist(),
                        "solutions": len(merged),
                    }
                    break
                x, lam = merged[0]
                table_x[k] = x
                resids[k] = _kkt_residual(model, x, lam, V[k], P[k])
                methods.append("face-enumeration")
        else:
            for k in range(V.shape[0]):
                outs = solve_faces(
                    model, V[k], P[k], box_center=x0,
                    box_radius=box_radius, tol_act=tol_act,
                )
                if len(outs) != 1:
                    ok = False
                    last_witness = {
                        "v": V[k].tolist(),
                        "p": P[k].tolist(),
                        "solutions": len(outs),
                    }
                    break
                table_x[k] = outs[0].x
                resids[k] = outs[0].residual
                methods.append(outs[0].method)
        if ok:
            agreements = []
            if model.m == 0 or all(model.affine_x):
                stride = max(1, len(methods) // max(1, cross_checks))
                for k in range(0, len(methods), stride):
                    proj = solve_projected(model, V[k], P[k], x0)
                    if proj.converged:
                        agreements.append(
                            float(np.max(np.abs(proj.x - table_x[k])))
                        )
            meta = {
                "rho_v": attempt_rho_v,
                "rho_p": attempt_rho_p,
                "grid_v": grid_v,
                "grid_p": grid_p,
                "n_random": n_random,
                "box_radius": box_radius,
                "seed": seed,
                "shrinks": shrink,
                "cross_check_max_gap": max(agreements) if agreements else None,
                "cross_checks": len(agreements),
            }
            return LocalizationTable(
                v_nodes=V, p_nodes=P, x_values=table_x,
                residuals=resids, methods=methods, meta=meta,
            )
        attempt_rho_v *= 0.5
        attempt_rho_p *= 0.5
    raise LocalizationError(
        "no single-valued localization at the requested radii "
        f"(after {MAX_SHRINK} halvings)",
        witness=last_witness,
    )
