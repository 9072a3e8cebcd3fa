"""Snapshot-based Galerkin reductors and steady-state gain matching.

Six reductors are available (``REDUCTORS``).  All of them produce an
orthonormal basis ``V`` from a :class:`SnapshotSet`; :func:`galerkin_project`
turns the basis into a :class:`ReducedOrderModel`.
"""

from __future__ import annotations

import hashlib
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .solvers import integrate, make_stepper
from .systems import Forcing, LinearSystem, StateSpace

__all__ = [
    "REDUCTORS",
    "DegenerateTrainingError",
    "SnapshotSet",
    "ReducedOrderModel",
    "training_amplitudes",
    "collect_snapshots",
    "pod",
    "gopod",
    "dmd_galerkin",
    "eds",
    "train_basis",
    "galerkin_project",
    "steady_gain",
    "gain_mismatch",
    "apply_gain_matching",
    "save_rom",
    "load_rom",
]

REDUCTORS = ("pod_r", "gopod_r", "dmd_r", "eds_ro_l", "eds_wx_l", "eds_wz_l")

DENSE_SVD_LIMIT = 5000
ORTHO_TOL = 1e-10


class DegenerateTrainingError(ValueError):
    pass


@dataclass
class SnapshotSet:
    """Primal (state) and dual (adjoint) snapshot matrices, one block per port.

    ``agg_primal``/``agg_dual`` hold the single-block runs of the averaged
    system (all inputs, respectively all outputs, driven at once).
    """

    primal: np.ndarray
    dual: np.ndarray
    primal_blocks: list[tuple[int, int]]
    dual_blocks: list[tuple[int, int]]
    dt: float
    agg_primal: np.ndarray | None = None
    agg_dual: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("primal", "dual", "agg_primal", "agg_dual"):
            M = getattr(self, name)
            if M is not None and not np.all(np.isfinite(M)):
                raise ValueError(f"{name} snapshots contain non-finite entries")
        if self.primal.shape[0] != self.dual.shape[0]:
            raise ValueError("primal and dual snapshots have different state dimensions")

    @property
    def n(self) -> int:
        return self.primal.shape[0]

    @property
    def theta_c(self) -> float:
        return float(np.linalg.norm(self.primal))

    @property
    def theta_o(self) -> float:
        return float(np.linalg.norm(self.dual))

    def weights(self, X) -> np.ndarray:
        return np.full(X.shape[1], self.dt)


def training_amplitudes(system, scale=0.01) -> np.ndarray:
    """Step heights per input port: ``scale`` times the steady boundary value.

    Demand ports with zero steady flux use the largest steady demand magnitude
    (or 1 kg/s on an all-zero demand set).  Systems without a steady state
    use ``scale`` directly.
    """
    s_bar = getattr(system, "s_bar", None)
    if s_bar is None:
        return np.full(system.n_inputs, float(scale))
    d = np.abs(system.d_bar)
    fallback = float(d.max()) if d.size and d.max() > 0 else 1.0
    return scale * np.concatenate([np.abs(s_bar), np.where(d > 0, d, fallback)])


def _adjoint(system) -> LinearSystem:
    J = system.jacobian(system.zero_state())
    JT = J.T.tocsr() if sp.issparse(J) else np.ascontiguousarray(J.T)
    E = system.E.T if sp.issparse(system.E) else np.ascontiguousarray(np.asarray(system.E).T)
    return LinearSystem(E, JT, np.zeros((system.n, 1)), np.zeros((1, system.n)))


def _mass_solve_T(system, v):
    # E is symmetric for every system assembled here
    return system.mass_solve(v)


def collect_snapshots(system: StateSpace, solver_id="imex1", horizon=None, dt=None, scale=0.01,
                      primal="step", aggregate=True, jobs=1, forcing=None) -> SnapshotSet:
    """Simulate one training run per input port and one adjoint run per output port.

    Primal runs drive port ``j`` with a constant step (``primal="step"``) or
    start from ``E^-1 B e_j`` with zero input (``primal="impulse"``).  Dual
    runs integrate ``E^T z' = J^T z`` of the steady-state linearization from
    ``z(0) = E^-T C^T e_i``.  ``horizon``/``dt`` default to ``forcing``.
    """
    if forcing is not None:
        horizon = forcing.horizon if horizon is None else horizon
        dt = forcing.dt if dt is None else dt
    if horizon is None or dt is None:
        raise ValueError("training horizon and dt are required")
    m, p = system.n_inputs, system.n_outputs
    amps = training_amplitudes(system, scale)

    def primal_run(vec):
        stepper = make_stepper(solver_id)
        if primal == "impulse":
            x0 = system.mass_solve(np.asarray(system.B @ vec).ravel())
            f = Forcing.constant(np.zeros(m), horizon, dt)
        else:
            x0 = None
            f = Forcing.constant(vec, horizon, dt)
        return integrate(system, stepper, f, snapshots=True, x0=x0).states.T

    adj = _adjoint(system)

    def dual_run(vec):
        z0 = _mass_solve_T(system, np.asarray(system.C.T @ vec).ravel())
        f = Forcing.constant(np.zeros(1), horizon, dt)
        return integrate(adj, make_stepper(solver_id), f, snapshots=True, x0=z0).states.T

    def run_all(fn, vectors):
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                return list(pool.map(fn, vectors))
        return [fn(v) for v in vectors]

    def wrap(fn, kind):
        def go(item):
            j, vec = item
            try:
                return fn(vec)
            except ArithmeticError as exc:
                raise RuntimeError(f"{kind} training run for port {j} failed: {exc}") from exc
        return go

    in_vecs = [(j, amps[j] * np.eye(m)[j]) for j in range(m)]
    out_vecs = [(i, np.eye(p)[i]) for i in range(p)]
    P = run_all(wrap(primal_run, "primal"), in_vecs)
    D = run_all(wrap(dual_run, "dual"), out_vecs)

    def stack(blocks):
        bounds, start = [], 0
        for b in blocks:
            bounds.append((start, start + b.shape[1]))
            start += b.shape[1]
        return np.hstack(blocks), bounds

    Xc, cb = stack(P)
    Xo, ob = stack(D)
    if not np.any(Xc) or not np.any(Xo):
        raise DegenerateTrainingError("degenerate training: snapshot set is identically zero")
    agg_c = agg_o = None
    if aggregate:
        agg_c = wrap(primal_run, "primal")(("all", amps.copy()))
        agg_o = wrap(dual_run, "dual")(("all", np.ones(p)))
    meta = {"solver": solver_id, "horizon": horizon, "dt": dt, "scale": scale, "primal": primal}
    return SnapshotSet(Xc, Xo, cb, ob, dt, agg_c, agg_o, meta)


# --------------------------------------------------------------------------
# bases


def _fix_signs(V):
    V = np.array(V, dtype=float, copy=True)
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def _numerical_rank(s, shape) -> int:
    if s.size == 0 or s[0] == 0:
        return 0
    tol = s[0] * max(shape) * np.finfo(float).eps
    return int(np.sum(s > tol))


def _left_svd(X):
    """Left singular vectors and values of ``X`` (dense or Gram-based)."""
    n, K = X.shape
    if n <= DENSE_SVD_LIMIT:
        U, s, _ = np.linalg.svd(X, full_matrices=False)
        return U, s
    if K <= n:
        lam, W = np.linalg.eigh(X.T @ X)
        order = np.argsort(lam)[::-1]
        s = np.sqrt(np.clip(lam[order], 0, None))
        W = W[:, order]
        keep = s > 0
        return (X @ W[:, keep]) / s[keep], s[keep]
    lam, U = np.linalg.eigh(X @ X.T)
    order = np.argsort(lam)[::-1]
    return U[:, order], np.sqrt(np.clip(lam[order], 0, None))


def _truncate(U, s, r, shape, name):
    if r < 1:
        raise ValueError("reduced order must be at least 1")
    rank = _numerical_rank(s, shape)
    if rank == 0:
        raise DegenerateTrainingError(f"{name}: snapshot set is identically zero")
    if r > rank:
        warnings.warn(f"{name}: requested order {r} exceeds numerical rank {rank}; truncating", stacklevel=3)
        r = rank
    return _fix_signs(U[:, :r])


def _weighted(X, weights):
    if weights is None:
        return X
    return X * np.sqrt(np.asarray(weights, dtype=float))


def pod(X, r, weights=None) -> np.ndarray:
    """Leading ``r`` left singular vectors of the (quadrature-weighted) snapshots."""
    Xw = _weighted(np.asarray(X, dtype=float), weights)
    U, s = _left_svd(Xw)
    return _truncate(U, s, r, Xw.shape, "pod")


def gopod(X, C, r, weights=None) -> np.ndarray:
    """POD modes re-ranked by ``sigma_i * ||C u_i||``."""
    Xw = _weighted(np.asarray(X, dtype=float), weights)
    U, s = _left_svd(Xw)
    rank = _numerical_rank(s, Xw.shape)
    if rank == 0:
        raise DegenerateTrainingError("gopod: snapshot set is identically zero")
    U, s = U[:, :rank], s[:rank]
    CU = C @ U
    eta = s * np.linalg.norm(np.asarray(CU), axis=0)
    order = np.argsort(-eta, kind="stable")
    if r < 1:
        raise ValueError("reduced order must be at least 1")
    if r > rank:
        warnings.warn(f"gopod: requested order {r} exceeds numerical rank {rank}; truncating", stacklevel=2)
        r = rank
    return _fix_signs(U[:, order[:r]])


def _orthonormalize(cols, tol=1e-10):
    basis = []
    for v in cols:
        v = np.array(v, dtype=float)
        nv = np.linalg.norm(v)
        if nv == 0:
            continue
        for _ in range(2):
            for b in basis:
                v -= (b @ v) * b
        nr = np.linalg.norm(v)
        if nr > tol * nv:
            basis.append(v / nr)
    return np.array(basis).T if basis else np.zeros((len(cols[0]) if cols else 0, 0))


def dmd_galerkin(X, r, blocks=None, return_eigs=False):
    """DMD modes of consecutive snapshot pairs, ranked by eigenvalue magnitude.

    Pairs are formed within each block only.  Complex modes contribute their
    real and imaginary parts; the collected columns are orthonormalized.
    """
    X = np.asarray(X, dtype=float)
    blocks = blocks or [(0, X.shape[1])]
    if any(b - a < 2 for a, b in blocks):
        raise ValueError("dmd needs at least 2 snapshots per block")
    X0 = np.hstack([X[:, a:b - 1] for a, b in blocks])
    X1 = np.hstack([X[:, a + 1:b] for a, b in blocks])
    U, s, Wh = np.linalg.svd(X0, full_matrices=False)
    k = _numerical_rank(s, X0.shape)
    if k == 0:
        raise DegenerateTrainingError("dmd: snapshot set is identically zero")
    U, s, W = U[:, :k], s[:k], Wh[:k].T
    Atilde = U.T @ X1 @ W / s
    lam, Y = np.linalg.eig(Atilde)
    order = np.argsort(-np.abs(lam), kind="stable")
    lam, Y = lam[order], Y[:, order]
    Phi = U @ Y
    cols = []
    for i, li in enumerate(lam):
        tol_im = 1e-12 * max(1.0, abs(li))
        if abs(li.imag) <= tol_im:
            cols.append(Phi[:, i].real)
        elif li.imag > 0:
            cols.append(Phi[:, i].real)
            cols.append(Phi[:, i].imag)
    V = _orthonormalize(cols)
    if r < 1:
        raise ValueError("reduced order must be at least 1")
    if r > V.shape[1]:
        warnings.warn(f"dmd: requested order {r} exceeds available modes {V.shape[1]}; truncating", stacklevel=2)
    V = _fix_signs(V[:, :r])
    return (V, lam) if return_eigs else V


def _cross_left(Xc, Xo, w):
    """Left singular pairs of ``Xc diag(w) Xo^T`` without forming it for wide n."""
    n, K = Xc.shape
    if n <= K:
        U, s, _ = np.linalg.svd((Xc * w) @ Xo.T)
        return U, s
    Qc, Rc = np.linalg.qr(Xc)
    Qo, Ro = np.linalg.qr(Xo)
    Um, s, _ = np.linalg.svd((Rc * w) @ Ro.T)
    return Qc @ Um, s


def eds(Xc, Xo, variant, r, weights=None, dual_weights=None, agg_c=None, agg_o=None) -> np.ndarray:
    """Empirical dominant subspaces from primal and dual snapshots.

    ``ro`` uses the balanced concatenation ``[Xc/|Xc|, Xo/|Xo|]``; ``wx`` the
    cross operator ``Xc W Xo^T``; ``wz`` the same operator built from the
    averaged-system runs ``agg_c``/``agg_o``.
    """
    Xc = np.asarray(Xc, dtype=float)
    Xo = np.asarray(Xo, dtype=float)
    if not np.any(Xc) or not np.any(Xo):
        raise DegenerateTrainingError("eds: degenerate (zero) snapshot set")
    if variant == "ro":
        Wc, Wo = _weighted(Xc, weights), _weighted(Xo, dual_weights)
        M = np.hstack([Wc / np.linalg.norm(Wc), Wo / np.linalg.norm(Wo)])
        U, s = _left_svd(M)
        return _truncate(U, s, r, M.shape, "eds_ro")
    if variant == "wz":
        if agg_c is None or agg_o is None:
            raise ValueError("eds_wz needs averaged-system snapshots")
        Xc, Xo = np.asarray(agg_c, float), np.asarray(agg_o, float)
    elif variant != "wx":
        raise ValueError(f"unknown eds variant {variant!r}")
    if Xc.shape[1] != Xo.shape[1]:
        raise ValueError("cross operator needs column-paired primal and dual snapshots")
    w = np.ones(Xc.shape[1]) if weights is None else np.asarray(weights, float)[: Xc.shape[1]]
    U, s = _cross_left(Xc, Xo, w)
    return _truncate(U, s, r, (Xc.shape[0], Xc.shape[0]), f"eds_{variant}")


def train_basis(reductor: str, snapshots: SnapshotSet, r: int, C=None) -> np.ndarray:
    """Dispatch a reductor id to its basis construction."""
    Xc, Xo = snapshots.primal, snapshots.dual
    wc = snapshots.weights(Xc)
    if reductor == "pod_r":
        return pod(Xc, r, wc)
    if reductor == "gopod_r":
        if C is None:
            raise ValueError("gopod_r needs the output map C")
        return gopod(Xc, C, r, wc)
    if reductor == "dmd_r":
        return dmd_galerkin(Xc, r, snapshots.primal_blocks)
    if reductor in ("eds_ro_l", "eds_wx_l", "eds_wz_l"):
        variant = reductor.split("_")[1]
        return eds(Xc, Xo, variant, r, wc, snapshots.weights(Xo), snapshots.agg_primal, snapshots.agg_dual)
    raise ValueError(f"unknown reductor {reductor!r}; valid ids: {', '.join(REDUCTORS)}")


# --------------------------------------------------------------------------
# projection


def _compact(M, density=0.3):
    M = np.asarray(M)
    if M.size and np.count_nonzero(M) <= density * M.size:
        return sp.csr_matrix(M)
    return M


class ReducedOrderModel(StateSpace):
    """Galerkin ROM ``x ≈ V x_r`` of a full system.

    The nonlinearity is evaluated by lifting to the full space, applying
    ``f`` and restricting with ``V^T``.  Projected operators that come out
    sparse (e.g. for ``V = I``) are stored sparse.
    """

    def __init__(self, full, V, D=None, provenance=None):
        V = np.asarray(V, dtype=float)
        self.full = full
        self.V = V
        E = full.E
        Er = V.T @ (E @ V)
        Ar = V.T @ (full.A @ V)
        Br = np.asarray(V.T @ full.B) if not sp.issparse(full.B) else np.asarray((full.B.T @ V).T)
        Cr = np.asarray(full.C @ V)
        Q = getattr(full, "Q", None)
        if Q is None:
            Qr = Er
        elif np.ndim(Q) == 1:
            Qr = V.T @ (Q[:, None] * V)
        else:
            Qr = V.T @ (Q @ V)
        self.E_r, self.A_r, self.B_r, self.C_r, self.Q_r = Er, Ar, Br, Cr, Qr
        if D is None:
            D = np.zeros((Cr.shape[0], Br.shape[1]))
        super().__init__(_compact(Er), _compact(Ar), _compact(Br), _compact(Cr), np.asarray(D, float),
                         steady_output=full.steady_output)
        self.Q = Qr
        ref = getattr(full, "state_reference", None)
        self.state_reference = None if ref is None else V.T @ ref
        self.provenance = dict(provenance or {})

    @property
    def r(self) -> int:
        return self.V.shape[1]

    def lift(self, xr):
        return self.V @ xr

    def nonlinear(self, x, u):
        return self.V.T @ self.full.nonlinear(self.V @ x, u)

    def nonlinear_jacobian(self, x, u):
        Jf = self.full.nonlinear_jacobian(self.V @ x, u)
        return self.V.T @ (Jf @ self.V)

    def with_feedthrough(self, D) -> "ReducedOrderModel":
        rom = ReducedOrderModel.__new__(ReducedOrderModel)
        rom.__dict__.update(self.__dict__)
        rom.D = np.asarray(D, dtype=float)
        rom._mass_factor = None
        rom.provenance = dict(self.provenance, gain_matching=True)
        return rom

    def gain(self) -> np.ndarray:
        """Static gain including the feedthrough."""
        return steady_gain(self.C_r, self.Q_r, self.B_r) + self.D


def galerkin_project(system, V, provenance=None) -> ReducedOrderModel:
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[1] == 0:
        raise ValueError("reduced order must be at least 1")
    if V.shape[0] != system.n or V.shape[1] > system.n:
        raise ValueError(f"basis shape {V.shape} incompatible with state dimension {system.n}")
    dev = np.max(np.abs(V.T @ V - np.eye(V.shape[1])))
    if dev > ORTHO_TOL:
        raise ValueError(f"basis is not orthonormal (max |V^T V - I| = {dev:.2e})")
    return ReducedOrderModel(system, V, provenance=provenance)


def steady_gain(C, Q, B) -> np.ndarray:
    """``S = C Q^-1 B`` for a diagonal (vector) or full SPD ``Q``."""
    C = C.toarray() if sp.issparse(C) else np.atleast_2d(np.asarray(C, float))
    B = B.toarray() if sp.issparse(B) else np.asarray(B, float)
    if B.ndim < 2:
        B = B.reshape(-1, 1) if C.shape[1] == B.size else np.atleast_2d(B)
    if sp.issparse(Q):
        Q = Q.toarray()
    Q = np.asarray(Q, dtype=float)
    if Q.ndim <= 1:
        q = np.atleast_1d(Q)
        if np.any(q == 0):
            raise np.linalg.LinAlgError("singular Q")
        return C @ (B / q[:, None])
    try:
        X = np.linalg.solve(Q, B)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular Q: {exc}") from None
    return C @ X


def gain_mismatch(full, rom) -> tuple[np.ndarray, float]:
    """``D = C Q^-1 B - C_r Q_r^-1 B_r`` and its mean absolute entry."""
    S = steady_gain(full.C, full.Q, full.B)
    Sr = steady_gain(rom.C_r, rom.Q_r, rom.B_r)
    if S.shape != Sr.shape:
        raise ValueError(f"port dimensions differ: {S.shape} vs {Sr.shape}")
    D = S - Sr
    return D, float(np.mean(np.abs(D)))


def apply_gain_matching(rom: ReducedOrderModel, D) -> ReducedOrderModel:
    """Add ``D`` as output feedthrough: ``y_r = C_r x_r + D u``."""
    D = np.asarray(D, dtype=float)
    if D.shape != (rom.n_outputs, rom.n_inputs):
        raise ValueError(f"feedthrough must be {rom.n_outputs}x{rom.n_inputs}")
    if not np.any(D):
        return rom
    return rom.with_feedthrough(D)


# --------------------------------------------------------------------------
# persistence

_ROM_FILES = ("V", "E_r", "A_r", "B_r", "C_r", "Q_r", "D")


def _dense(M):
    return M.toarray() if sp.issparse(M) else np.atleast_2d(np.asarray(M, dtype=float))


def save_rom(rom: ReducedOrderModel, directory) -> str:
    """Write the ROM as CSV matrices plus ``manifest.json``; returns the manifest hash."""
    os.makedirs(directory, exist_ok=True)
    digests = {}
    for name in _ROM_FILES:
        path = os.path.join(directory, f"{name}.csv")
        buf = "\n".join(",".join(repr(float(v)) for v in row) for row in _dense(getattr(rom, name))) + "\n"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(buf)
        digests[f"{name}.csv"] = hashlib.sha256(buf.encode()).hexdigest()
    manifest = {
        "provenance": rom.provenance,
        "r": rom.r,
        "n": rom.V.shape[0],
        "inputs": rom.n_inputs,
        "outputs": rom.n_outputs,
        "files": digests,
    }
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return hashlib.sha256(text.encode()).hexdigest()


def load_rom(directory, full) -> ReducedOrderModel:
    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    V = np.loadtxt(os.path.join(directory, "V.csv"), delimiter=",", ndmin=2)
    D = np.loadtxt(os.path.join(directory, "D.csv"), delimiter=",", ndmin=2)
    rom = galerkin_project(full, V, provenance=manifest.get("provenance"))
    return apply_gain_matching(rom, D) if np.any(D) else rom
