"""fullstab: certify full stability of parametric variational systems.

The toolkit decides, for a finite-dimensional system
``v in f(x, p) + N_{C(p)}(x)`` with smooth inequality-constraint data,
whether a reference solution is a (Lipschitzian/Hoelderian) fully stable
solution, by running checkable constraint-qualification and second-order
conditions, and corroborates the verdict empirically by solving the
perturbed system on a grid and fitting stability moduli.
"""

from .modelspec import ParametricModel, ReferenceTriple, parse_model, print_model

__all__ = ["ParametricModel", "ReferenceTriple", "parse_model", "print_model"]
__version__ = "0.1.0"
