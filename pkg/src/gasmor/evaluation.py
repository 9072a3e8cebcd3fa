"""ROM quality measures and the reduced-order sweep."""

from __future__ import annotations

import io
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .reductors import (apply_gain_matching, collect_snapshots, galerkin_project, gain_mismatch,
                        train_basis)
from .solvers import integrate, make_stepper

__all__ = [
    "ErrorCurve",
    "EvaluationReport",
    "l2l2_error",
    "normalized_accuracy",
    "morscore",
    "sweep",
    "compare",
    "report_csv",
    "summary_csv",
    "plot_data_csv",
]

DEFAULT_EPS = 1e-16


def l2l2_error(Y_fom, Y_rom, dt) -> float:
    """Relative time-discrete ``L2 (x) L2`` error of ``Y_rom`` against ``Y_fom``.

    Rows are time samples, columns output ports.
    """
    Y_fom = np.atleast_2d(np.asarray(Y_fom, dtype=float))
    Y_rom = np.atleast_2d(np.asarray(Y_rom, dtype=float))
    if Y_fom.shape != Y_rom.shape:
        raise ValueError(f"mismatched grids: {Y_fom.shape} vs {Y_rom.shape}")
    dt = np.broadcast_to(np.asarray(dt, dtype=float), (Y_fom.shape[0],))
    num = np.sqrt(np.sum(dt[:, None] * (Y_fom - Y_rom) ** 2))
    den = np.sqrt(np.sum(dt[:, None] * Y_fom**2))
    if den == 0:
        return 0.0 if num == 0 else math.inf
    return float(num / den)


@dataclass
class ErrorCurve:
    orders: np.ndarray
    errors: np.ndarray
    failed: np.ndarray

    def __post_init__(self):
        self.orders = np.asarray(self.orders, dtype=int)
        self.errors = np.asarray(self.errors, dtype=float)
        self.failed = np.asarray(self.failed, dtype=bool) if len(self.failed) else np.zeros(len(self.orders), bool)

    @classmethod
    def from_errors(cls, errors, orders=None):
        errors = np.asarray(errors, dtype=float)
        orders = np.arange(1, len(errors) + 1) if orders is None else orders
        return cls(orders, errors, ~np.isfinite(errors))


def normalized_accuracy(errors, eps=DEFAULT_EPS) -> np.ndarray:
    """``clamp(log10 e / log10 eps, 0, 1)``; infinite errors map to 0."""
    e = np.asarray(errors, dtype=float)
    out = np.zeros_like(e)
    pos = np.isfinite(e) & (e > 0)
    with np.errstate(divide="ignore"):
        out[pos] = np.log10(e[pos]) / math.log10(eps)
    out[np.isfinite(e) & (e == 0)] = 1.0
    return np.clip(out, 0.0, 1.0)


def morscore(curve: ErrorCurve | np.ndarray, eps=DEFAULT_EPS, r_max=None) -> float:
    """Mean normalized accuracy over orders ``1..r_max``.

    Orders missing from a strided curve are skipped, so the mean runs over
    the evaluated orders only.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if not isinstance(curve, ErrorCurve):
        curve = ErrorCurve.from_errors(curve)
    r_max = int(curve.orders.max()) if r_max is None else int(r_max)
    sel = curve.orders <= r_max
    yhat = normalized_accuracy(curve.errors[sel], eps)
    if sel.sum() == r_max and np.array_equal(curve.orders[sel], np.arange(1, r_max + 1)):
        return float(np.sum(yhat) / r_max)
    return float(np.mean(yhat)) if yhat.size else 0.0


@dataclass
class EvaluationReport:
    reductor: str
    curve: ErrorCurve
    morscore: float
    avg_gain_error: float
    gain_errors: np.ndarray
    train_s: float
    sim_s: float
    r_max: int
    eps: float
    solver: str = "imex1"
    model: str = "ode_end"
    gain_matching: bool = False
    scenario_key: str = ""
    notes: list[str] = field(default_factory=list)


def sweep(model, solver_id, reductor, forcing, r_max, gain_matching=False, stride=1, eps=DEFAULT_EPS,
          snapshots=None, fom=None, train_forcing=None, jobs=1, scenario_key="") -> EvaluationReport:
    """Train once at width ``r_max``, then project, simulate and score every order.

    ``fom`` may carry a precomputed full-order trajectory for ``forcing``;
    ``snapshots`` a precomputed training set.  ROM failures at a given order
    are recorded as infinite error.
    """
    notes = []
    if r_max > model.n:
        warnings.warn(f"r_max {r_max} exceeds state dimension {model.n}; clipping", stacklevel=2)
        notes.append(f"r_max clipped from {r_max} to {model.n}")
        r_max = model.n
    if fom is None:
        fom = integrate(model, make_stepper(solver_id), forcing)
    dt = fom.dt

    t0 = time.perf_counter()
    if snapshots is None:
        snapshots = collect_snapshots(model, solver_id, forcing=train_forcing or forcing, jobs=jobs)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        V = train_basis(reductor, snapshots, r_max, C=model.C)
    notes += [str(w.message) for w in caught]
    train_s = time.perf_counter() - t0

    orders = np.arange(1, r_max + 1, stride)
    Y_ref = fom.outputs_abs

    width = V.shape[1]
    if width < orders[-1]:
        notes.append(f"orders above {width} reuse the full {width}-column basis")
    memo = {}

    def evaluate(r):
        # orders beyond the trained width reuse the full basis
        r = min(int(r), width)
        if r not in memo:
            memo[r] = _evaluate(r)
        return memo[r]

    def _evaluate(r):
        rom = galerkin_project(model, V[:, :r], provenance={"reductor": reductor, "r": int(r)})
        D, gerr = gain_mismatch(model, rom)
        if gain_matching:
            rom = apply_gain_matching(rom, D)
        try:
            traj = integrate(rom, make_stepper(solver_id), forcing, dt=dt)
        except (ArithmeticError, np.linalg.LinAlgError, ValueError):
            return math.inf, gerr
        return l2l2_error(Y_ref, traj.outputs_abs, dt), gerr

    t1 = time.perf_counter()
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(evaluate, orders))
    else:
        results = [evaluate(r) for r in orders]
    sim_s = time.perf_counter() - t1

    errors = np.array([e for e, _ in results])
    gains = np.array([g for _, g in results])
    curve = ErrorCurve(orders, errors, ~np.isfinite(errors))
    mu = morscore(curve, eps, r_max)
    avg_gain = float(np.nanmean(gains)) if np.any(np.isfinite(gains)) else math.nan
    return EvaluationReport(reductor, curve, mu, avg_gain, gains, train_s, sim_s, int(r_max), eps,
                            solver_id, model.scheme.value, gain_matching, scenario_key, notes)


def compare(reports):
    """Rank reports by MORscore (descending), ties by mean gain error (ascending).

    Returns ``(rows, plot_data)`` where ``plot_data`` maps each reductor to its
    ``(orders, errors)`` series.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to compare")
    first = reports[0]
    for rep in reports[1:]:
        if (rep.r_max, rep.eps, rep.scenario_key) != (first.r_max, first.eps, first.scenario_key):
            raise ValueError(
                f"inconsistent sweep parameters: {rep.reductor} (r_max={rep.r_max}, eps={rep.eps}) vs "
                f"{first.reductor} (r_max={first.r_max}, eps={first.eps})")
    ranked = sorted(reports, key=lambda r: (-r.morscore, r.avg_gain_error if math.isfinite(r.avg_gain_error) else math.inf))
    rows = [{"rank": i + 1, "reductor": r.reductor, "morscore": r.morscore, "avg_gain_error": r.avg_gain_error,
             "train_s": r.train_s, "sim_s": r.sim_s} for i, r in enumerate(ranked)]
    plot_data = {r.reductor: (r.curve.orders, r.curve.errors) for r in reports}
    return rows, plot_data


def report_csv(reports) -> str:
    out = io.StringIO()
    out.write("reductor,r,error,gain_error\n")
    for rep in reports:
        for r, e, g in zip(rep.curve.orders, rep.curve.errors, rep.gain_errors):
            out.write(f"{rep.reductor},{r},{e:.10e},{g:.10e}\n")
    return out.getvalue()


def summary_csv(reports) -> str:
    rows, _ = compare(reports)
    out = io.StringIO()
    out.write("reductor,morscore,avg_gain_error,train_s,sim_s\n")
    for row in rows:
        out.write(f"{row['reductor']},{row['morscore']:.6f},{row['avg_gain_error']:.6e},"
                  f"{row['train_s']:.3f},{row['sim_s']:.3f}\n")
    return out.getvalue()


def plot_data_csv(plot_data) -> str:
    out = io.StringIO()
    out.write("reductor,r,error\n")
    for name, (orders, errors) in plot_data.items():
        for r, e in zip(orders, errors):
            out.write(f"{name},{r},{e:.10e}\n")
    return out.getvalue()
