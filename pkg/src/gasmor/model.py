"""Semi-discrete isothermal Euler network model.

One segment per (virtual) pipe.  With ``gamma = R_s T_0 z_0`` the state
``x = (p, q)`` obeys, per non-supply node ``i`` and pipe ``k = (i -> j)``::

    E_p,ii p_i' = sum_k (+-) q_k - d_i(t)            E_p,ii = sum_k S_k L_k / (2 gamma)
    E_q,kk q_k' = p_i - p_j - gamma lam_k L_k |q_k| q_k / (2 d_k S_k^2 p*)
                  - (g dh_k / gamma) p_g              E_q,kk = L_k / S_k

``p*`` is the pipe-midpoint pressure for ``ode_mid`` and the downstream
endpoint pressure for ``ode_end``.  Supply pressures enter through ``B``.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .network import Network, Scenario, incidence
from .systems import Forcing, StateSpace

__all__ = [
    "GasConstants",
    "Scheme",
    "Gravity",
    "PressureUnderflow",
    "SteadyStateError",
    "SteadyDiagnostics",
    "SemiDiscreteModel",
    "nikuradse",
    "assemble",
    "steady_state",
    "build_model",
    "model_summary_csv",
]


class PressureUnderflow(ArithmeticError):
    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(f"pressure underflow at node index {index} (p = {value:.6g} Pa)")


class SteadyStateError(ArithmeticError):
    def __init__(self, message, diagnostics):
        self.diagnostics = diagnostics
        super().__init__(message)


@dataclass(frozen=True)
class GasConstants:
    R_s: float = 530.0
    T_0: float = 283.15
    z_0: float = 0.8
    g: float = 9.80665

    def __post_init__(self):
        for name in ("R_s", "T_0", "z_0", "g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def gamma(self) -> float:
        return self.R_s * self.T_0 * self.z_0


class Scheme(str, enum.Enum):
    MIDPOINT = "ode_mid"
    ENDPOINT = "ode_end"

    @property
    def port_hamiltonian(self) -> bool:
        return self is Scheme.ENDPOINT


class Gravity(str, enum.Enum):
    NONE = "none"
    STATIC = "static"
    DYNAMIC = "dynamic"


MODELS = tuple(s.value for s in Scheme)
GRAVITY_MODES = tuple(g.value for g in Gravity)


def nikuradse(diameter, roughness):
    """Fully turbulent friction factor ``(2 log10(d/k) + 1.138)^-2``."""
    diameter = np.asarray(diameter, dtype=float)
    roughness = np.asarray(roughness, dtype=float)
    return (2.0 * np.log10(diameter / roughness) + 1.138) ** -2


@dataclass
class SteadyDiagnostics:
    converged: bool
    iterations: int
    residual: float
    history: list[float] = field(default_factory=list)


class SemiDiscreteModel(StateSpace):
    """Assembled network ODE.  Use :func:`assemble` and :func:`steady_state`."""

    def __init__(self, network, constants, scheme, gravity, friction=None):
        self.network = network
        self.constants = constants
        self.scheme = Scheme(scheme)
        self.gravity = Gravity(gravity)
        inc = incidence(network)
        self.incidence = inc
        pipes = network.pipes
        gamma = constants.gamma

        self.n_p = len(inc.interior_nodes)
        self.n_q = len(pipes)
        self.n_s = len(network.supply_nodes)
        self.n_d = len(network.demand_nodes)

        L = np.array([p.length for p in pipes])
        d = np.array([p.diameter for p in pipes])
        S = math.pi * d**2 / 4.0
        dh = np.array([p.height_delta for p in pipes])
        if friction is None:
            lam = nikuradse(d, np.array([p.roughness for p in pipes]))
        else:
            lam = np.full(self.n_q, float(friction))
        self.length, self.diameter, self.area, self.friction, self.height_delta = L, d, S, lam, dh
        self._fric_coef = gamma * lam * L / (2.0 * d * S**2)
        self._grav_coef = constants.g * dh / gamma

        # pipe endpoints indexed into the extended pressure vector [p; s]
        slot = {n: i for i, n in enumerate(inc.interior_nodes)}
        slot.update({n: self.n_p + i for i, n in enumerate(inc.supply_nodes)})
        self._from = np.array([slot[p.from_node] for p in pipes], dtype=int)
        self._to = np.array([slot[p.to_node] for p in pipes], dtype=int)

        A0, AS = inc.A0, inc.AS
        Ep = np.asarray(abs(A0) @ (S * L)).ravel() / (2.0 * gamma)
        Eq = L / S
        self.e = np.concatenate([Ep, Eq])
        n = self.n_p + self.n_q
        E = sp.diags(self.e, format="csr")
        A = sp.bmat([[None, A0], [-A0.T, None]], format="csr")
        A.resize((n, n))

        demand_rows = [slot[n_] for n_ in network.demand_nodes]
        Bd = sp.csr_matrix((-np.ones(self.n_d), (demand_rows, np.arange(self.n_d))), shape=(self.n_p, self.n_d))
        B = sp.bmat([[sp.csr_matrix((self.n_p, self.n_s)), Bd],
                     [-AS.T, sp.csr_matrix((self.n_q, self.n_d))]], format="csr")
        Cs = -AS
        Cd = sp.csr_matrix((np.ones(self.n_d), (np.arange(self.n_d), demand_rows)), shape=(self.n_d, self.n_p))
        C = sp.bmat([[sp.csr_matrix((self.n_s, self.n_p)), Cs],
                     [Cd, sp.csr_matrix((self.n_d, self.n_q))]], format="csr")
        super().__init__(E, A, B, C)
        self.Q = self.e.copy()

        self.xbar: np.ndarray | None = None
        self.state_reference = None
        self.s_bar: np.ndarray | None = None
        self.d_bar: np.ndarray | None = None
        self._fbar = None
        self._pstar_bar = None

    # -- bookkeeping ----------------------------------------------------

    @property
    def port_hamiltonian(self) -> bool:
        return self.scheme.port_hamiltonian

    @property
    def ubar(self) -> np.ndarray:
        return np.concatenate([self.s_bar, self.d_bar])

    @property
    def is_centered(self) -> bool:
        return self.xbar is not None

    def _require_steady(self):
        if self.xbar is None:
            raise RuntimeError("steady state not computed; call steady_state(model, s_bar, d_bar) first")

    def split(self, x):
        return x[: self.n_p], x[self.n_p:]

    # -- absolute-coordinate nonlinearity ---------------------------------

    def _pstar(self, p, s):
        P = np.concatenate([p, s])
        bad = np.flatnonzero(~(p > 0))
        if bad.size:
            raise PressureUnderflow(int(bad[0]), float(p[bad[0]]))
        if self.scheme is Scheme.MIDPOINT:
            return 0.5 * (P[self._from] + P[self._to])
        return P[self._to]

    def f_abs(self, x_abs, s_abs, gravity: Gravity | None = None):
        """Friction + gravity term at absolute state and supply pressures."""
        gravity = self.gravity if gravity is None else Gravity(gravity)
        p, q = self.split(x_abs)
        pstar = self._pstar(p, s_abs)
        fq = -self._fric_coef * np.abs(q) * q / pstar
        if gravity is Gravity.DYNAMIC:
            fq = fq - self._grav_coef * pstar
        elif gravity is Gravity.STATIC:
            pg = self._pstar_bar if self._pstar_bar is not None else pstar
            fq = fq - self._grav_coef * pg
        return np.concatenate([np.zeros(self.n_p), fq])

    def f_abs_jacobian(self, x_abs, s_abs, gravity: Gravity | None = None):
        gravity = self.gravity if gravity is None else Gravity(gravity)
        p, q = self.split(x_abs)
        pstar = self._pstar(p, s_abs)
        dq = -2.0 * self._fric_coef * np.abs(q) / pstar
        dpstar = self._fric_coef * np.abs(q) * q / pstar**2
        if gravity is Gravity.DYNAMIC or (gravity is Gravity.STATIC and self._pstar_bar is None):
            dpstar = dpstar - self._grav_coef
        rows = [self.n_p + np.arange(self.n_q)]
        cols = [self.n_p + np.arange(self.n_q)]
        vals = [dq]
        k = np.arange(self.n_q)
        if self.scheme is Scheme.MIDPOINT:
            ends = ((self._from, 0.5), (self._to, 0.5))
        else:
            ends = ((self._to, 1.0),)
        for idx, w in ends:
            m = idx < self.n_p
            rows.append(self.n_p + k[m])
            cols.append(idx[m])
            vals.append(w * dpstar[m])
        n = self.n_p + self.n_q
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))

    # -- deviation-coordinate interface ---------------------------------

    def nonlinear(self, x, u):
        self._require_steady()
        return self.f_abs(self.xbar + x, self.s_bar + u[: self.n_s]) - self._fbar

    def nonlinear_jacobian(self, x, u):
        self._require_steady()
        return self.f_abs_jacobian(self.xbar + x, self.s_bar + u[: self.n_s])

    def eval_rhs(self, x, u, t=0.0):
        """Return ``(A x + B u, f(x̄+x) - f(x̄))`` without side effects."""
        return self.rhs(x, u)

    def eval_jacobian(self, x, u=None):
        return self.jacobian(x, u)

    def perturbation(self, scale=1e-3) -> np.ndarray:
        """Deterministic state deviation of relative size ``scale``."""
        self._require_steady()
        p, q = self.split(self.xbar)
        return scale * np.concatenate([p, np.maximum(np.abs(q), 1.0)])

    def forcing(self, scenario: Scenario) -> Forcing:
        """Input deviations ``u(t) = (s(t) - s̄, d(t) - d̄)`` for a scenario."""
        self._require_steady()
        scenario.check_ports(self.network)
        ports = self.network.ports
        ubar = self.ubar
        return Forcing(scenario.horizon, scenario.dt, lambda t: scenario.values(ports, t) - ubar)

    def residual_abs(self, x_abs, s_abs, d_abs):
        """Steady residual ``A x + B u + f(x)`` in absolute coordinates."""
        u = np.concatenate([s_abs, d_abs])
        return self.A @ x_abs + self.B @ u + self.f_abs(x_abs, s_abs, self._steady_gravity())

    def _steady_gravity(self):
        return Gravity.DYNAMIC if self.gravity is Gravity.STATIC and self._pstar_bar is None else self.gravity


def assemble(network: Network, constants: GasConstants | None = None, scheme="ode_end",
             gravity="dynamic", friction: float | None = None) -> SemiDiscreteModel:
    """Assemble the semi-discrete model for ``network``.

    ``friction`` overrides the Nikuradse factor with one scalar for every pipe.
    """
    return SemiDiscreteModel(network, constants or GasConstants(), scheme, gravity, friction)


def _scaled_norm(model, r, s_bar, d_bar):
    fscale = max(1.0, float(np.max(np.abs(d_bar), initial=0.0)))
    pscale = float(np.max(s_bar))
    rp, rq = r[: model.n_p], r[model.n_p:]
    return max(float(np.max(np.abs(rp), initial=0.0)) / fscale, float(np.max(np.abs(rq), initial=0.0)) / pscale)


def _initial_flows(model, d_bar):
    demand = np.zeros(model.n_p)
    rows = [model.incidence.interior_nodes.index(n) for n in model.network.demand_nodes]
    demand[rows] = d_bar
    A0 = model.incidence.A0
    if A0.shape[0] == A0.shape[1]:
        try:
            q = spla.spsolve(A0.tocsc(), demand)
            if np.all(np.isfinite(q)):
                return np.atleast_1d(q)
        except RuntimeError:
            pass
    return spla.lsqr(A0, demand, atol=1e-14, btol=1e-14)[0]


def steady_state(model: SemiDiscreteModel, s_bar, d_bar, tol=1e-10, max_iter=50):
    """Solve ``0 = A x + B u + f(x)`` by damped Newton and center the model there.

    Returns the absolute steady state and a :class:`SteadyDiagnostics`.
    Raises :class:`SteadyStateError` after ``max_iter`` iterations.
    """
    s_bar = np.atleast_1d(np.asarray(s_bar, dtype=float))
    d_bar = np.atleast_1d(np.asarray(d_bar, dtype=float))
    if s_bar.shape != (model.n_s,) or d_bar.shape != (model.n_d,):
        raise ValueError(f"expected {model.n_s} supply and {model.n_d} demand values")
    if np.any(s_bar <= 0):
        raise ValueError("supply pressures must be positive")
    model._pstar_bar = None
    grav = model._steady_gravity()
    u = np.concatenate([s_bar, d_bar])

    x = np.concatenate([np.full(model.n_p, float(np.mean(s_bar))), _initial_flows(model, d_bar)])

    def resid(z):
        return model.A @ z + model.B @ u + model.f_abs(z, s_bar, grav)

    r = resid(x)
    norm = _scaled_norm(model, r, s_bar, d_bar)
    history = [norm]
    it = 0
    while norm > tol and it < max_iter:
        it += 1
        J = (model.A + model.f_abs_jacobian(x, s_bar, grav)).tocsc()
        try:
            dx = spla.spsolve(J, -r)
        except RuntimeError:
            dx = np.full(model.n, np.nan)
        if not np.all(np.isfinite(dx)):
            dx = spla.lsqr(J, -r, atol=1e-15, btol=1e-15)[0]
        step = 1.0
        while True:
            trial = x + step * dx
            try:
                rt = resid(trial)
                nt = _scaled_norm(model, rt, s_bar, d_bar)
            except ArithmeticError:
                nt = math.inf
            if nt <= (1.0 - 1e-4 * step) * norm or step < 1e-10:
                break
            step *= 0.5
        if not math.isfinite(nt):
            break
        x, r, norm = trial, rt, nt
        history.append(norm)

    diag = SteadyDiagnostics(norm <= tol, it, norm, history)
    if not diag.converged:
        raise SteadyStateError(f"Newton did not converge after {it} iterations (residual {norm:.3e})", diag)

    model.xbar = x
    model.s_bar = s_bar
    model.d_bar = d_bar
    model._pstar_bar = model._pstar(x[: model.n_p], s_bar)
    model._fbar = model.f_abs(x, s_bar)
    model.steady_output = model.C @ x
    model.state_reference = x
    return x, diag


def build_model(network: Network, scenario: Scenario, constants=None, scheme="ode_end",
                gravity="dynamic", friction=None) -> SemiDiscreteModel:
    """Assemble and center on the scenario's t=0 boundary values."""
    model = assemble(network, constants, scheme, gravity, friction)
    s_bar, d_bar = scenario.steady_inputs(network)
    steady_state(model, s_bar, d_bar)
    return model


def model_summary_csv(model: SemiDiscreteModel) -> str:
    """Debug dump: dimensions, spectrum estimates of ``E^-1 A`` and the steady state."""
    out = io.StringIO()
    out.write("key,value\n")
    out.write(f"model,{model.scheme.value}\ngravity,{model.gravity.value}\n")
    out.write(f"port_hamiltonian,{model.port_hamiltonian}\n")
    for k in ("n_p", "n_q", "n_s", "n_d"):
        out.write(f"{k},{getattr(model, k)}\n")
    out.write(f"n_inputs,{model.n_inputs}\nn_outputs,{model.n_outputs}\n")
    if model.n <= 2000:
        M = (model.A.toarray().T / model.e).T
        if model.is_centered:
            J = model.jacobian(np.zeros(model.n)).toarray()
            M = (J.T / model.e).T
        ev = np.linalg.eigvals(M)
        out.write(f"spectral_abscissa,{ev.real.max():.6e}\n")
        out.write(f"max_abs_imag,{np.abs(ev.imag).max():.6e}\n")
        out.write(f"spectral_radius,{np.abs(ev).max():.6e}\n")
    if model.is_centered:
        inc = model.incidence
        for name, val in zip(inc.interior_nodes, model.xbar[: model.n_p]):
            out.write(f"p[{name}],{val:.10e}\n")
        for name, val in zip(inc.pipes, model.xbar[model.n_p:]):
            out.write(f"q[{name}],{val:.10e}\n")
    return out.getvalue()
