"""Shared operator plumbing for full and reduced input-output systems.

Every system integrated by :mod:`gasmor.solvers` has the form::

    E x' = A x + B u + f(x, u),    y = C x + D u

in deviation coordinates around a steady state.  Subclasses supply ``f`` and
its Jacobian; everything linear lives here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = ["StateSpace", "LinearSystem", "Forcing", "SingularSystemError", "as_diagonal"]


class SingularSystemError(ArithmeticError):
    pass


def as_diagonal(M) -> np.ndarray | None:
    """Return the diagonal of ``M`` if ``M`` is exactly diagonal, else None."""
    if sp.issparse(M):
        M = M.tocoo()
        if np.all(M.row == M.col) or M.nnz == 0:
            return np.asarray(M.diagonal(), dtype=float)
        off = M.row != M.col
        return np.asarray(M.diagonal(), dtype=float) if not np.any(M.data[off]) else None
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        return None
    if np.count_nonzero(M - np.diag(np.diag(M))) == 0:
        return np.diag(M).astype(float)
    return None


@dataclass(frozen=True)
class Forcing:
    """Input deviation signal ``u(t)`` with a horizon and a step hint."""

    horizon: float
    dt: float
    fn: Callable[[float], np.ndarray]

    def __call__(self, t: float) -> np.ndarray:
        return self.fn(t)

    @classmethod
    def constant(cls, u, horizon, dt):
        u = np.asarray(u, dtype=float)
        return cls(horizon, dt, lambda t: u)


class StateSpace:
    """Linear operator bundle with a pluggable nonlinearity."""

    def __init__(self, E, A, B, C, D=None, steady_output=None):
        self.E = E
        self.A = A
        self.B = B
        self.C = C
        self.D = D
        self._e_diag = as_diagonal(E)
        self._mass_factor = None
        n_out = C.shape[0]
        self.steady_output = np.zeros(n_out) if steady_output is None else np.asarray(steady_output, float)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    def zero_state(self) -> np.ndarray:
        return np.zeros(self.n)

    # -- linear algebra -------------------------------------------------

    def linear(self, x, u):
        return self.A @ x + self.B @ u

    def mass_matvec(self, x):
        if self._e_diag is not None:
            return self._e_diag * x
        return self.E @ x

    def mass_solve(self, v):
        if self._e_diag is not None:
            return v / self._e_diag
        if self._mass_factor is None:
            E = self.E.toarray() if sp.issparse(self.E) else self.E
            self._mass_factor = sla.cho_factor(E)
        return sla.cho_solve(self._mass_factor, v)

    def shifted_factor(self, alpha: float):
        """Factorize ``E - alpha*J`` (``J`` defaults to ``A``) and return a solver."""
        return factorize(self._shifted(alpha, self.A), alpha)

    def _shifted(self, alpha, J):
        if sp.issparse(self.E) or sp.issparse(J):
            E = self.E if sp.issparse(self.E) else sp.csr_matrix(self.E)
            return (E - alpha * J).tocsc()
        return self.E - alpha * J

    # -- nonlinearity ---------------------------------------------------

    def nonlinear(self, x, u):
        return np.zeros(self.n)

    def nonlinear_jacobian(self, x, u):
        return sp.csr_matrix((self.n, self.n))

    def rhs(self, x, u):
        """Split right-hand side ``(A x + B u, f(x, u))`` of ``E x' = ...``."""
        return self.linear(x, u), self.nonlinear(x, u)

    def jacobian(self, x, u=None):
        if u is None:
            u = np.zeros(self.n_inputs)
        Jf = self.nonlinear_jacobian(x, u)
        if sp.issparse(self.A):
            return (self.A + sp.csr_matrix(Jf)).tocsr()
        return self.A + (Jf.toarray() if sp.issparse(Jf) else Jf)

    def output(self, x, u):
        y = self.C @ x
        if self.D is not None and np.any(self.D):
            y = y + self.D @ u
        return y

    def energy(self, x) -> float:
        return float(np.sqrt(max(x @ self.mass_matvec(x), 0.0)))


def factorize(M, alpha=None):
    """Return a solve callable for a square sparse or dense matrix."""
    try:
        if sp.issparse(M):
            lu = spla.splu(sp.csc_matrix(M))
            return lu.solve
        lu = sla.lu_factor(M, check_finite=True)
    except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        raise SingularSystemError(f"singular linear system (dt-shift {alpha}): {exc}") from None
    if np.any(np.diag(lu[0]) == 0):
        raise SingularSystemError(f"singular linear system (dt-shift {alpha})")
    return lambda b: sla.lu_solve(lu, b)


class LinearSystem(StateSpace):
    """Plain linear system (``f = 0``), used for adjoint runs and test problems."""
