"""Parametric model files: parsing, exact derivatives, point evaluation.

A model couples a base map f(x, p) on R^n (given directly or as the
x-gradient of a scalar potential) with m inequality constraints
phi_i(x, p) <= 0 and, optionally, a reference triple on the solution-map
graph.  All derivative data (Jacobian of f, constraint gradients and
Hessians) is built symbolically once at construction and evaluated on
demand, exactly at rational points.

Model file format (UTF-8, '#' comments)::

    dims n=3 d=2
    potential = x3 + (1/4 + p2)*x1 + p1*x2 + x3^2 - x1*x2
    constraint x1 - x3 - p1 <= 0
    ...
    reference x=(0,0,0) p=(0,0) v=(0,0,0)

Either ``potential = <expr>`` or ``f = (<expr>, ..., <expr>)`` must be
present.  Variables are spelled x1..xn and p1..pd.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from . import expr as ex
from .defaults import FEAS_TOL
from .errors import (
    DimensionError,
    EvaluationError,
    InfeasiblePointError,
    ModelSyntaxError,
)

__all__ = [
    "ParametricModel",
    "ReferenceTriple",
    "EvalBundle",
    "parse_model",
    "print_model",
    "eval_bundle",
    "eval_bundle_exact",
]


@dataclass(frozen=True)
class ReferenceTriple:
    """A point (x, p, v) on the solution-map graph; ``v_hat = v - f(x, p)``
    is always recomputed from the model, never stored independently."""

    x: tuple
    p: tuple
    v: tuple

    def as_arrays(self):
        return (
            np.array([float(c) for c in self.x]),
            np.array([float(c) for c in self.p]),
            np.array([float(c) for c in self.v]),
        )

    @property
    def is_rational(self) -> bool:
        return all(
            isinstance(c, (int, Fraction)) for c in (*self.x, *self.p, *self.v)
        )


@dataclass(frozen=True)
class ParametricModel:
    n: int
    d: int
    f_components: tuple  # n expressions
    constraints: tuple  # m expressions
    potential: Optional[ex.Expr] = None
    reference: Optional[ReferenceTriple] = None
    # derived symbolic tables, filled in __post_init__
    f_jac: tuple = field(default=(), compare=False)  # n x n exprs, d f_i / d x_j
    grad_phi: tuple = field(default=(), compare=False)  # m x n exprs
    hess_phi: tuple = field(default=(), compare=False)  # m x n x n exprs
    affine_x: tuple = field(default=(), compare=False)  # per-constraint flag
    affine_xp: tuple = field(default=(), compare=False)  # gradient constant in (x,p)
    affine_joint: tuple = field(default=(), compare=False)  # phi_i affine in (x,p)
    param_free: tuple = field(default=(), compare=False)  # phi_i independent of p
    f_affine: bool = field(default=False, compare=False)  # f affine in (x,p)

    @property
    def m(self) -> int:
        return len(self.constraints)

    def __post_init__(self):
        if len(self.f_components) != self.n:
            raise DimensionError(
                f"f has {len(self.f_components)} components, expected n={self.n}"
            )
        n, d = self.n, self.d
        f_jac = tuple(
            tuple(ex.differentiate(fi, "x", j) for j in range(n))
            for fi in self.f_components
        )
        grad_phi = tuple(
            tuple(ex.differentiate(phi, "x", j) for j in range(n))
            for phi in self.constraints
        )
        hess_phi = tuple(
            tuple(
                tuple(ex.differentiate(gj, "x", k) for k in range(n))
                for gj in grads
            )
            for grads in grad_phi
        )
        affine_x = tuple(
            all(ex.expr_is_zero(h, n, d) for row in hess for h in row)
            for hess in hess_phi
        )
        affine_xp = tuple(
            affine_x[i]
            and all(
                ex.expr_is_zero(ex.differentiate(g, "p", l), n, d)
                for g in grad_phi[i]
                for l in range(d)
            )
            for i in range(len(self.constraints))
        )
        param_free = tuple(
            all(
                ex.expr_is_zero(ex.differentiate(phi, "p", l), n, d)
                for l in range(d)
            )
            for phi in self.constraints
        )
        affine_joint = tuple(
            affine_xp[i]
            and all(
                ex.expr_is_zero(
                    ex.differentiate(ex.differentiate(phi, "p", l), "p", l2), n, d
                )
                for l in range(d)
                for l2 in range(d)
            )
            for i, phi in enumerate(self.constraints)
        )
        f_affine = all(
            ex.expr_is_zero(ex.differentiate(fij, "x", k), n, d)
            and all(
                ex.expr_is_zero(ex.differentiate(fij, "p", l), n, d)
                for l in range(d)
            )
            for row in f_jac
            for fij in row
            for k in range(n)
        ) and all(
            ex.expr_is_zero(
                ex.differentiate(ex.differentiate(fi, "p", l), "p", l2), n, d
            )
            for fi in self.f_components
            for l in range(d)
            for l2 in range(d)
        )
        object.__setattr__(self, "f_jac", f_jac)
        object.__setattr__(self, "grad_phi", grad_phi)
        object.__setattr__(self, "hess_phi", hess_phi)
        object.__setattr__(self, "affine_x", affine_x)
        object.__setattr__(self, "affine_xp", affine_xp)
        object.__setattr__(self, "affine_joint", affine_joint)
        object.__setattr__(self, "param_free", param_free)
        object.__setattr__(self, "f_affine", f_affine)
        if self.reference is not None:
            self._check_reference()

    def _check_reference(self):
        ref = self.reference
        if len(ref.x) != self.n or len(ref.p) != self.d or len(ref.v) != self.n:
            raise DimensionError("reference dimensions do not match dims header")
        phi = self.phi_values(ref.x, ref.p)
        for i, val in enumerate(phi):
            if float(val) > FEAS_TOL:
                raise InfeasiblePointError(
                    f"reference point violates constraint {i + 1}: "
                    f"phi_{i + 1} = {float(val):.3e} > {FEAS_TOL}"
                )

    # -- point evaluation ---------------------------------------------------

    def f_values(self, x, p):
        return [ex.evaluate(fi, x, p) for fi in self.f_components]

    def phi_values(self, x, p):
        return [ex.evaluate(phi, x, p) for phi in self.constraints]

    def v_hat(self, ref: Optional[ReferenceTriple] = None):
        """v - f(x, p), exact at rational references."""
        ref = ref or self.reference
        fx = self.f_values(ref.x, ref.p)
        return [v - fv for v, fv in zip(ref.v, fx)]


@dataclass(frozen=True)
class EvalBundle:
    """All first- and second-order data at one point (float arrays)."""

    f: np.ndarray  # (n,)
    jac_f: np.ndarray  # (n, n), entry [i, j] = d f_i / d x_j
    phi: np.ndarray  # (m,)
    grad_phi: np.ndarray  # (m, n)
    hess_phi: np.ndarray  # (m, n, n)


def eval_bundle(model: ParametricModel, x, p) -> EvalBundle:
    """Evaluate f, its x-Jacobian, all constraints with gradients and
    Hessians at (x, p).  Raises EvaluationError on division by zero."""
    x = [float(c) for c in x]
    p = [float(c) for c in p]
    if len(x) != model.n or len(p) != model.d:
        raise DimensionError(
            f"point has dims ({len(x)}, {len(p)}), model needs ({model.n}, {model.d})"
        )
    n, m = model.n, model.m
    f = np.array([float(ex.evaluate(fi, x, p)) for fi in model.f_components])
    jac = np.array(
        [[float(ex.evaluate(model.f_jac[i][j], x, p)) for j in range(n)] for i in range(n)]
    ).reshape(n, n)
    phi = np.array([float(ex.evaluate(c, x, p)) for c in model.constraints])
    grad = np.array(
        [[float(ex.evaluate(model.grad_phi[i][j], x, p)) for j in range(n)] for i in range(m)]
    ).reshape(m, n)
    hess = np.array(
        [
            [
                [float(ex.evaluate(model.hess_phi[i][j][k], x, p)) for k in range(n)]
                for j in range(n)
            ]
            for i in range(m)
        ]
    ).reshape(m, n, n)
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(jac)) and np.all(np.isfinite(phi))):
        raise EvaluationError("non-finite value in evaluation bundle")
    return EvalBundle(f=f, jac_f=jac, phi=phi, grad_phi=grad, hess_phi=hess)


class EvalBundleExact:
    """Fraction-valued twin of :class:`EvalBundle` for certification runs."""

    def __init__(self, f, jac_f, phi, grad_phi, hess_phi):
        self.f = f
        self.jac_f = jac_f
        self.phi = phi
        self.grad_phi = grad_phi
        self.hess_phi = hess_phi


def eval_bundle_exact(model: ParametricModel, x, p) -> EvalBundleExact:
    n, m = model.n, model.m
    f = [ex.evaluate(fi, x, p) for fi in model.f_components]
    jac = [[ex.evaluate(model.f_jac[i][j], x, p) for j in range(n)] for i in range(n)]
    phi = [ex.evaluate(c, x, p) for c in model.constraints]
    grad = [[ex.evaluate(model.grad_phi[i][j], x, p) for j in range(n)] for i in range(m)]
    hess = [
        [[ex.evaluate(model.hess_phi[i][j][k], x, p) for k in range(n)] for j in range(n)]
        for i in range(m)
    ]
    return EvalBundleExact(f, jac, phi, grad, hess)


# ---------------------------------------------------------------------------
# model-file grammar

_DIMS_RE = re.compile(r"^dims\s+n\s*=\s*(\d+)\s+d\s*=\s*(\d+)\s*$")
_CONSTR_RE = re.compile(r"^constraint\s+(.*?)\s*<=\s*0\s*$")
_REF_RE = re.compile(
    r"^reference\s+x\s*=\s*\(([^)]*)\)\s+p\s*=\s*\(([^)]*)\)\s+v\s*=\s*\(([^)]*)\)\s*$"
)


def parse_model(text: str) -> ParametricModel:
    """Parse a model file; see the module docstring for the grammar."""
    n = d = None
    potential = None
    f_components = None
    constraints = []
    reference = None
    parser = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("dims"):
            m = _DIMS_RE.match(line)
            if not m:
                raise ModelSyntaxError("malformed dims header", lineno)
            n, d = int(m.group(1)), int(m.group(2))
            parser = ex.ExprParser(n, d)
            continue
        if parser is None:
            raise ModelSyntaxError("dims header must come first", lineno)
        if line.startswith("potential"):
            _, _, rhs = line.partition("=")
            if not rhs.strip():
                raise ModelSyntaxError("potential needs an expression", lineno)
            potential = parser.parse(rhs.strip(), lineno)
            continue
        if line.startswith("f"):
            _, _, rhs = line.partition("=")
            rhs = rhs.strip()
            if not (rhs.startswith("(") and rhs.endswith(")")):
                raise ModelSyntaxError("f must be a parenthesized tuple", lineno)
            parts = _split_tuple(rhs[1:-1], lineno)
            f_components = tuple(parser.parse(part, lineno) for part in parts)
            continue
        if line.startswith("constraint"):
            m = _CONSTR_RE.match(line)
            if not m:
                raise ModelSyntaxError("constraint must end with '<= 0'", lineno)
            constraints.append(parser.parse(m.group(1), lineno))
            continue
        if line.startswith("reference"):
            m = _REF_RE.match(line)
            if not m:
                raise ModelSyntaxError(
                    "reference must look like 'reference x=(...) p=(...) v=(...)'",
                    lineno,
                )
            xs = _parse_vector(m.group(1), n, "x", lineno)
            ps = _parse_vector(m.group(2), d, "p", lineno)
            vs = _parse_vector(m.group(3), n, "v", lineno)
            reference = ReferenceTriple(x=xs, p=ps, v=vs)
            continue
        raise ModelSyntaxError(f"unrecognized line: {line!r}", lineno)

    if n is None:
        raise ModelSyntaxError("missing dims header")
    if potential is None and f_components is None:
        raise ModelSyntaxError("model needs either 'potential =' or 'f = (...)'")
    if potential is not None and f_components is not None:
        raise ModelSyntaxError("give either a potential or f, not both")
    if potential is not None:
        f_components = tuple(ex.differentiate(potential, "x", j) for j in range(n))
    return ParametricModel(
        n=n,
        d=d,
        f_components=f_components,
        constraints=tuple(constraints),
        potential=potential,
        reference=reference,
    )


def _split_tuple(body: str, lineno: int):
    parts = []
    depth = 0
    current = []
    for c in body:
        if c == "(":
            depth += 1
        elif c == ")":
            depth -= 1
        if c == "," and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(c)
    parts.append("".join(current))
    parts = [part.strip() for part in parts]
    if any(not part for part in parts):
        raise ModelSyntaxError("empty tuple component", lineno)
    return parts


def _parse_vector(body: str, size: int, label: str, lineno: int) -> tuple:
    body = body.strip()
    parts = [s.strip() for s in body.split(",")] if body else []
    if len(parts) != size:
        raise ModelSyntaxError(
            f"{label} has {len(parts)} components, expected {size}", lineno
        )
    values = []
    for part in parts:
        try:
            values.append(_parse_number(part))
        except (ValueError, ZeroDivisionError):
            raise ModelSyntaxError(f"bad number {part!r} in {label}", lineno)
    return tuple(values)


def _parse_number(token: str):
    token = token.strip()
    neg = token.startswith("-")
    if neg:
        token = token[1:].strip()
    if "/" in token:
        a, b = token.split("/")
        value = Fraction(int(a), int(b))
    else:
        value = Fraction(token)
    return -value if neg else value


def print_model(model: ParametricModel) -> str:
    """Render back to the file grammar; parse(print(model)) evaluates
    pointwise identically."""
    lines = [f"dims n={model.n} d={model.d}"]
    if model.potential is not None:
        lines.append(f"potential = {ex.to_string(model.potential)}")
    else:
        body = ", ".join(ex.to_string(c) for c in model.f_components)
        lines.append(f"f = ({body})")
    for phi in model.constraints:
        lines.append(f"constraint {ex.to_string(phi)} <= 0")
    if model.reference is not None:
        ref = model.reference
        lines.append(
            "reference x=({}) p=({}) v=({})".format(
                ", ".join(_format_number(c) for c in ref.x),
                ", ".join(_format_number(c) for c in ref.p),
                ", ".join(_format_number(c) for c in ref.v),
            )
        )
    return "\n".join(lines) + "\n"


def _format_number(value) -> str:
    if isinstance(value, Fraction):
        if value.denominator == 1:
            return str(value.numerator)
        return f"{value.numerator}/{value.denominator}"
    return repr(value)
