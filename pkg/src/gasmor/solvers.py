"""Time steppers for ``E x' = A x + B u(t) + f(x, u)``.

Six schemes share one stepping contract: ``stepper.step(system, x, t, dt, u)``
returns the next state, where ``u`` is a callable ``t -> input deviation``.
``generic`` is adaptive and additionally exposes :meth:`Rosenbrock23.attempt`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .systems import Forcing, factorize

__all__ = [
    "SOLVERS",
    "ButcherTableau",
    "RK4",
    "RK2HYP",
    "RK4HYP",
    "IntegrationError",
    "StepSizeUnderflow",
    "Trajectory",
    "ExplicitRK",
    "IMEX1",
    "IMEX2",
    "Rosenbrock23",
    "make_stepper",
    "explicit_rk_step",
    "imex1_step",
    "imex2_step",
    "rosenbrock_adaptive",
    "integrate",
    "max_stable_dt",
    "observed_order",
]

SOLVERS = ("generic", "imex1", "imex2", "rk4", "rk2hyp", "rk4hyp")


@dataclass(frozen=True)
class ButcherTableau:
    name: str
    c: tuple[float, ...]
    a: tuple[tuple[float, ...], ...]
    b: tuple[float, ...]
    order: int

    @property
    def stages(self) -> int:
        return len(self.b)

    @property
    def nested(self) -> bool:
        """True when only the subdiagonal ``a[i][i-1]`` is populated."""
        return all(v == 0 for i, row in enumerate(self.a) for j, v in enumerate(row) if j != i - 1)

    @classmethod
    def nested_form(cls, name, c, b, order):
        s = len(c)
        a = tuple(tuple(c[i] if j == i - 1 else 0.0 for j in range(s)) for i in range(s))
        return cls(name, tuple(c), a, tuple(b), order)

    def matrix(self) -> np.ndarray:
        return np.array(self.a, dtype=float)


RK4 = ButcherTableau(
    "rk4",
    (0.0, 0.5, 0.5, 1.0),
    ((0.0, 0.0, 0.0, 0.0), (0.5, 0.0, 0.0, 0.0), (0.0, 0.5, 0.0, 0.0), (0.0, 0.0, 1.0, 0.0)),
    (1 / 6, 1 / 3, 1 / 3, 1 / 6),
    4,
)

# five stages, second order, stage i sees only stage i-1
RK2HYP = ButcherTableau.nested_form(
    "rk2hyp",
    (0.0, 1 / 4, 1 / 6, 3 / 8, 1 / 2),
    (0.0, 0.0, 0.0, 0.0, 1.0),
    2,
)

# six stages, fourth order, optimized hyperbolic stability limit; b5 is zero
RK4HYP_C = ("0", "0.16791846623918", "0.48298439719700", "0.70546072965982",
            "0.09295870406537", "0.76210081248836")
RK4HYP_B = ("-0.15108370762927", "0.75384683913851", "-0.36016595357907",
            "0.52696773139913", "0", "0.23043509067071")
RK4HYP = ButcherTableau.nested_form(
    "rk4hyp",
    tuple(float(v) for v in RK4HYP_C),
    tuple(float(v) for v in RK4HYP_B),
    4,
)

TABLEAUS = {t.name: t for t in (RK4, RK2HYP, RK4HYP)}


def exact_weights(name: str) -> tuple[tuple[Fraction, ...], tuple[Fraction, ...]]:
    """Nodes and weights of a hyp tableau as exact decimal fractions."""
    if name == "rk2hyp":
        return (tuple(Fraction(v) for v in ("0", "1/4", "1/6", "3/8", "1/2")),
                tuple(Fraction(v) for v in ("0", "0", "0", "0", "1")))
    if name == "rk4hyp":
        return tuple(Fraction(v) for v in RK4HYP_C), tuple(Fraction(v) for v in RK4HYP_B)
    raise KeyError(name)


class IntegrationError(ArithmeticError):
    def __init__(self, t, cause):
        self.t = t
        self.cause = cause
        super().__init__(f"integration failed at t = {t:.6g} s: {cause}")


class StepSizeUnderflow(ArithmeticError):
    pass


# --------------------------------------------------------------------------
# single steps


def _total(system, x, u):
    lin, nl = system.rhs(x, u)
    return lin + nl


def explicit_rk_step(tableau: ButcherTableau, system, x, t, dt, u):
    """One explicit Runge-Kutta step with ``E^-1`` applied to every stage."""
    a = tableau.a
    k = []
    for i in range(tableau.stages):
        xi = x
        for j in range(i):
            if a[i][j] != 0.0:
                xi = xi + (dt * a[i][j]) * k[j]
        ti = t + tableau.c[i] * dt
        k.append(system.mass_solve(_total(system, xi, u(ti))))
    incr = None
    for bi, ki in zip(tableau.b, k):
        if bi != 0.0:
            incr = bi * ki if incr is None else incr + bi * ki
    return x + dt * incr


class _ShiftCache:
    """Holds one factorization of ``E - alpha A``; refactorizes when alpha changes."""

    def __init__(self):
        self.key = None
        self.solve = None

    def get(self, system, alpha):
        key = (id(system), alpha)
        if key != self.key:
            self.solve = system.shifted_factor(alpha)
            self.key = key
        return self.solve


def imex1_step(system, x, t, dt, u, cache=None):
    """Implicit Euler on ``A``, explicit Euler on ``f``."""
    solve = (cache or _ShiftCache()).get(system, dt)
    rhs = system.mass_matvec(x) + dt * (system.B @ u(t + dt) + system.nonlinear(x, u(t)))
    return solve(rhs)


def imex2_step(system, x, t, dt, u, cache=None):
    """Implicit half step for the stage, explicit midpoint update."""
    solve = (cache or _ShiftCache()).get(system, 0.5 * dt)
    u0 = u(t)
    Ex = system.mass_matvec(x)
    xs = solve(Ex + (0.5 * dt) * (system.B @ u0 + system.nonlinear(x, u0)))
    um = u(t + 0.5 * dt)
    update = system.A @ xs + system.B @ um + system.nonlinear(xs, um)
    return system.mass_solve(Ex + dt * update)


_D = 1.0 / (2.0 + math.sqrt(2.0))
_E32 = 6.0 + math.sqrt(2.0)


def rosenbrock_adaptive(system, x, t, dt, u, rtol=1e-3, atol=1e-6, dt_min=1e-9):
    """One attempted step of the 2(3) Rosenbrock pair with ``d = 1/(2+sqrt 2)``.

    Returns ``(x_new, dt_used, dt_next, accepted)``; on rejection ``x_new`` is ``x``.
    """
    if dt < dt_min:
        raise StepSizeUnderflow(f"step size {dt:.3e} s below minimum {dt_min:.1e} s at t = {t:.6g} s")
    u0 = u(t)
    J = system.jacobian(x, u0)
    W = factorize(system._shifted(dt * _D, J), dt)
    F0 = _total(system, x, u0)
    delta = math.sqrt(np.finfo(float).eps) * max(abs(t), dt)
    T = (_total(system, x, u(t + delta)) - F0) / delta
    hdT = dt * _D * T
    k1 = W(F0 + hdT)
    F1 = _total(system, x + 0.5 * dt * k1, u(t + 0.5 * dt))
    k2 = W(F1 - system.mass_matvec(k1)) + k1
    x_new = x + dt * k2
    F2 = _total(system, x_new, u(t + dt))
    k3 = W(F2 - _E32 * (system.mass_matvec(k2) - F1) - 2.0 * (system.mass_matvec(k1) - F0) + hdT)
    err = (dt / 6.0) * (k1 - 2.0 * k2 + k3)
    ref = getattr(system, "state_reference", None)
    if ref is None:
        ref = np.zeros_like(x)
    scale = atol + rtol * np.maximum(np.abs(ref + x), np.abs(ref + x_new))
    ratio = float(np.max(np.abs(err) / scale)) if err.size else 0.0
    if not math.isfinite(ratio):
        return x, dt, 0.2 * dt, False
    factor = 5.0 if ratio == 0.0 else min(5.0, max(0.2, 0.8 * ratio ** (-1.0 / 3.0)))
    accepted = ratio <= 1.0
    return (x_new if accepted else x), dt, factor * dt, accepted


# --------------------------------------------------------------------------
# stepper objects


class ExplicitRK:
    adaptive = False

    def __init__(self, tableau: ButcherTableau):
        self.tableau = tableau
        self.id = tableau.name

    def step(self, system, x, t, dt, u):
        return explicit_rk_step(self.tableau, system, x, t, dt, u)


class IMEX1:
    id = "imex1"
    adaptive = False

    def __init__(self):
        self._cache = _ShiftCache()

    def step(self, system, x, t, dt, u):
        return imex1_step(system, x, t, dt, u, self._cache)


class IMEX2:
    id = "imex2"
    adaptive = False

    def __init__(self):
        self._cache = _ShiftCache()

    def step(self, system, x, t, dt, u):
        return imex2_step(system, x, t, dt, u, self._cache)


class Rosenbrock23:
    id = "generic"
    adaptive = True

    def __init__(self, rtol=1e-3, atol=1e-6, dt_min=1e-9):
        self.rtol, self.atol, self.dt_min = rtol, atol, dt_min

    def attempt(self, system, x, t, dt, u):
        return rosenbrock_adaptive(system, x, t, dt, u, self.rtol, self.atol, self.dt_min)

    def step(self, system, x, t, dt, u):
        """Advance exactly ``dt`` using as many accepted substeps as needed."""
        x, _, _ = self.advance(system, x, t, t + dt, dt, u)
        return x

    def advance(self, system, x, t, t_end, h, u, stats=None):
        while t < t_end:
            remaining = t_end - t
            last = h >= remaining * (1 - 1e-12)
            h_try = remaining if last else h
            x, used, h_next, ok = self.attempt(system, x, t, h_try, u)
            if stats is not None:
                stats["accepted" if ok else "rejected"] += 1
            if ok:
                t = t_end if last else t + used
                # a grid-clipped last step must not shrink the carried size
                h = max(h, h_next) if last else h_next
            else:
                h = h_next
            if h < self.dt_min:
                raise StepSizeUnderflow(f"step size {h:.3e} s below minimum at t = {t:.6g} s")
        return x, t, h


def make_stepper(solver_id: str, rtol=1e-3, atol=1e-6):
    """Build a fresh stepper; factorization caches are per instance."""
    if solver_id in TABLEAUS:
        return ExplicitRK(TABLEAUS[solver_id])
    if solver_id == "imex1":
        return IMEX1()
    if solver_id == "imex2":
        return IMEX2()
    if solver_id == "generic":
        return Rosenbrock23(rtol, atol)
    raise ValueError(f"unknown solver {solver_id!r}; valid ids: {', '.join(SOLVERS)}")


# --------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    times: np.ndarray
    outputs: np.ndarray
    steady_output: np.ndarray
    states: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    @property
    def outputs_abs(self) -> np.ndarray:
        return self.outputs + self.steady_output

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0


def _steps(horizon, dt):
    return max(1, int(math.ceil(horizon / dt - 1e-9)))


def integrate(system, stepper, forcing: Forcing, dt=None, snapshots=False, x0=None, horizon=None):
    """Run ``stepper`` over the forcing horizon and record outputs each step.

    Fixed-step schemes take ``ceil(T/dt)`` steps; ``generic`` adapts
    internally and reports at the same grid.  Stepper failures are re-raised
    as :class:`IntegrationError` carrying the failure time.
    """
    dt = forcing.dt if dt is None else dt
    horizon = forcing.horizon if horizon is None else horizon
    if not dt > 0:
        raise ValueError("dt must be positive")
    N = _steps(horizon, dt)
    times = np.arange(N + 1) * dt
    x = system.zero_state() if x0 is None else np.array(x0, dtype=float)
    Y = np.empty((N + 1, system.n_outputs))
    X = np.empty((N + 1, system.n)) if snapshots else None
    stats = {"accepted": 0, "rejected": 0}
    Y[0] = system.output(x, forcing(0.0))
    if X is not None:
        X[0] = x
    h = dt
    for k in range(N):
        t = times[k]
        try:
            if stepper.adaptive:
                x, _, h = stepper.advance(system, x, t, times[k + 1], min(h, dt), forcing, stats)
            else:
                x = stepper.step(system, x, t, dt, forcing)
                stats["accepted"] += 1
        except (ArithmeticError, np.linalg.LinAlgError) as exc:
            raise IntegrationError(t, exc) from exc
        if not np.all(np.isfinite(x)):
            raise IntegrationError(times[k + 1], "non-finite state")
        Y[k + 1] = system.output(x, forcing(times[k + 1]))
        if X is not None:
            X[k + 1] = x
    return Trajectory(times, Y, np.asarray(system.steady_output, dtype=float), X, stats)


def max_stable_dt(system, stepper, forcing: Forcing, lo, hi, x0, horizon=None, iterations=20, growth=1e3):
    """Largest step in ``[lo, hi]`` for which the run stays finite and bounded.

    The predicate is ``max_t ||x(t)||_E <= growth * ||x0||_E`` over the horizon.
    """
    x0 = np.asarray(x0, dtype=float)
    bound = growth * system.energy(x0)

    def stable(dt):
        T = forcing.horizon if horizon is None else horizon
        N = _steps(T, dt)
        x = x0.copy()
        try:
            for k in range(N):
                x = stepper.step(system, x, k * dt, dt, forcing)
                if not np.all(np.isfinite(x)) or system.energy(x) > bound:
                    return False
        except (ArithmeticError, np.linalg.LinAlgError, FloatingPointError):
            return False
        return True

    if not stable(lo):
        raise ValueError(f"entire range unstable: dt = {lo} already fails")
    if stable(hi):
        return float(hi)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if stable(mid):
            lo = mid
        else:
            hi = mid
    return float(lo)


def observed_order(dts, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(dt)``."""
    return float(np.polyfit(np.log(np.asarray(dts, float)), np.log(np.asarray(errors, float)), 1)[0])
