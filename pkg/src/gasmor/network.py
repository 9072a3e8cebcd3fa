"""Network topology, boundary scenarios and height profiles.

Networks are read from a small CSV dialect::

    # pipes
    P1,N1,N2,1000,0.5,0,1e-5
    # ports
    supply,N1
    demand,N2

Pipe rows are ``id,from,to,length_m,diameter_m,height_delta_m,roughness_m``.
Every other ``#`` line is a comment.  Node and pipe ordering follows
declaration order everywhere so matrix layouts are reproducible.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

__all__ = [
    "NetworkError",
    "PipeSpec",
    "Network",
    "Scenario",
    "IncidenceDecomposition",
    "ValidationReport",
    "parse_network",
    "serialize_network",
    "parse_scenario",
    "serialize_scenario",
    "parse_profiles",
    "expand_height_profile",
    "apply_height_profiles",
    "validate",
    "incidence",
]

HEIGHT_TOL = 1e-9


class NetworkError(ValueError):
    """Raised for malformed or inconsistent network, scenario or profile data."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


@dataclass(frozen=True)
class PipeSpec:
    id: str
    from_node: str
    to_node: str
    length: float
    diameter: float
    height_delta: float = 0.0
    roughness: float = 1e-5

    def __post_init__(self):
        if not self.length > 0:
            raise NetworkError(f"pipe {self.id}: length must be positive")
        if not self.diameter > 0:
            raise NetworkError(f"pipe {self.id}: diameter must be positive")
        if not self.roughness >= 0:
            raise NetworkError(f"pipe {self.id}: roughness must be nonnegative")
        if self.from_node == self.to_node:
            raise NetworkError(f"pipe {self.id}: from_node equals to_node ({self.from_node})")

    @property
    def area(self) -> float:
        return math.pi * self.diameter**2 / 4.0


@dataclass(frozen=True)
class Network:
    """Directed pipe graph with pressure-prescribed (supply) and
    flux-prescribed (demand) boundary nodes.

    Construction checks the local invariants (known nodes, disjoint and
    nonempty port sets); connectivity is reported by :func:`validate`.
    """

    nodes: tuple[str, ...]
    pipes: tuple[PipeSpec, ...]
    supply_nodes: tuple[str, ...]
    demand_nodes: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "pipes", tuple(self.pipes))
        object.__setattr__(self, "supply_nodes", tuple(self.supply_nodes))
        object.__setattr__(self, "demand_nodes", tuple(self.demand_nodes))
        known = set(self.nodes)
        if len(known) != len(self.nodes):
            raise NetworkError("duplicate node ids")
        ids = [p.id for p in self.pipes]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise NetworkError(f"duplicate pipe ids: {', '.join(dup)}")
        for p in self.pipes:
            for n in (p.from_node, p.to_node):
                if n not in known:
                    raise NetworkError(f"pipe {p.id} references unknown node {n}")
        if not self.supply_nodes:
            raise NetworkError("at least one supply node is required")
        for n in self.supply_nodes + self.demand_nodes:
            if n not in known:
                raise NetworkError(f"port references unknown node {n}")
        overlap = set(self.supply_nodes) & set(self.demand_nodes)
        if overlap:
            raise NetworkError(f"node(s) {', '.join(sorted(overlap))} are both supply and demand")

    @property
    def ports(self) -> tuple[str, ...]:
        """Input ports in input-vector order: supplies first, then demands."""
        return self.supply_nodes + self.demand_nodes

    @property
    def interior_nodes(self) -> tuple[str, ...]:
        """Non-supply nodes in declaration order (the pressure state layout)."""
        supply = set(self.supply_nodes)
        return tuple(n for n in self.nodes if n not in supply)

    def pipe(self, pipe_id: str) -> PipeSpec:
        for p in self.pipes:
            if p.id == pipe_id:
                return p
        raise KeyError(pipe_id)


def _float(text, line, column, name):
    try:
        value = float(text)
    except ValueError:
        raise NetworkError(f"{name}: cannot parse {text!r} as a number", line, column) from None
    if not math.isfinite(value):
        raise NetworkError(f"{name}: value must be finite", line, column)
    return value


_PIPE_FIELDS = ("id", "from", "to", "length_m", "diameter_m", "height_delta_m", "roughness_m")


def parse_network(text: str | Iterable[str]) -> Network:
    """Parse the ``.net.csv`` dialect and return a validated :class:`Network`."""
    if not isinstance(text, str):
        text = "".join(text)
    section = None
    pipes: list[PipeSpec] = []
    supply: list[str] = []
    demand: list[str] = []
    order: dict[str, None] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            tag = line[1:].strip().lower()
            if tag in ("pipes", "ports"):
                section = tag
            continue
        row = [c.strip() for c in next(csv.reader([line]))]
        if section == "pipes":
            if len(row) != len(_PIPE_FIELDS):
                raise NetworkError(
                    f"expected {len(_PIPE_FIELDS)} fields ({','.join(_PIPE_FIELDS)}), got {len(row)}",
                    lineno, min(len(row), len(_PIPE_FIELDS)) + 1)
            pid, a, b = row[:3]
            for col, value in enumerate(row[:3], start=1):
                if not value:
                    raise NetworkError(f"empty {_PIPE_FIELDS[col - 1]}", lineno, col)
            nums = [_float(row[i], lineno, i + 1, _PIPE_FIELDS[i]) for i in range(3, 7)]
            try:
                pipe = PipeSpec(pid, a, b, *nums)
            except NetworkError as exc:
                raise NetworkError(str(exc), lineno) from None
            pipes.append(pipe)
            order.setdefault(a)
            order.setdefault(b)
        elif section == "ports":
            if len(row) != 2:
                raise NetworkError("port rows have the form 'supply,<node>' or 'demand,<node>'", lineno, 1)
            kind, node = row[0].lower(), row[1]
            if kind == "supply":
                supply.append(node)
            elif kind == "demand":
                demand.append(node)
            else:
                raise NetworkError(f"unknown port kind {row[0]!r}", lineno, 1)
            order.setdefault(node)
        else:
            raise NetworkError("data row outside of a '# pipes' or '# ports' section", lineno, 1)

    for group in (supply, demand):
        seen = set()
        for n in group:
            if n in seen:
                raise NetworkError(f"port node {n} declared twice")
            seen.add(n)

    net = Network(tuple(order), tuple(pipes), tuple(supply), tuple(demand))
    report = validate(net)
    if not report.ok:
        raise NetworkError("; ".join(report.failures()))
    return net


def _fmt(x: float) -> str:
    return repr(float(x))


def serialize_network(network: Network) -> str:
    out = ["# pipes"]
    for p in network.pipes:
        out.append(",".join([p.id, p.from_node, p.to_node, _fmt(p.length), _fmt(p.diameter),
                             _fmt(p.height_delta), _fmt(p.roughness)]))
    out.append("# ports")
    out += [f"supply,{n}" for n in network.supply_nodes]
    out += [f"demand,{n}" for n in network.demand_nodes]
    return "\n".join(out) + "\n"


@dataclass
class ValidationReport:
    entries: list[tuple[str, bool, str]] = field(default_factory=list)
    connected: bool = False
    is_tree: bool = False
    n_nodes: int = 0
    n_pipes: int = 0
    n_supply: int = 0
    n_demand: int = 0

    @property
    def ok(self) -> bool:
        return all(passed for _, passed, _ in self.entries)

    def failures(self) -> list[str]:
        return [f"{name}: {detail}" for name, passed, detail in self.entries if not passed]

    def lines(self) -> list[str]:
        return [f"{'PASS' if passed else 'FAIL'} {name}: {detail}" for name, passed, detail in self.entries]


def validate(network: Network) -> ValidationReport:
    """Connectivity, tree/cycle classification and port bookkeeping."""
    index = {n: i for i, n in enumerate(network.nodes)}
    n = len(network.nodes)
    rep = ValidationReport(n_nodes=n, n_pipes=len(network.pipes),
                           n_supply=len(network.supply_nodes), n_demand=len(network.demand_nodes))
    if n == 0:
        rep.entries.append(("connectivity", False, "network has no nodes"))
        return rep
    rows = [index[p.from_node] for p in network.pipes]
    cols = [index[p.to_node] for p in network.pipes]
    adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    ncomp, labels = connected_components(adj, directed=False)
    rep.connected = ncomp == 1
    if rep.connected:
        rep.entries.append(("connectivity", True, "connected"))
    else:
        main = labels[index[network.supply_nodes[0]]]
        stray = [network.nodes[i] for i in range(n) if labels[i] != main]
        rep.entries.append(("connectivity", False,
                            f"disconnected ({ncomp} components; unreachable: {', '.join(stray)})"))
    rep.is_tree = rep.connected and len(network.pipes) == n - 1
    rep.entries.append(("topology", True, "tree" if rep.is_tree else "cycle detected" if rep.connected else "forest"))
    rep.entries.append(("ports", bool(network.supply_nodes),
                        f"{rep.n_supply} supply, {rep.n_demand} demand"))
    rep.entries.append(("pipes", len(network.pipes) > 0, f"{rep.n_pipes} pipes, {rep.n_nodes} nodes"))
    return rep


@dataclass(frozen=True)
class IncidenceDecomposition:
    A0: sp.csr_matrix
    AS: sp.csr_matrix
    interior_nodes: tuple[str, ...]
    supply_nodes: tuple[str, ...]
    pipes: tuple[str, ...]

    @property
    def stacked(self) -> sp.csr_matrix:
        return sp.vstack([self.A0, self.AS]).tocsr()


def incidence(network: Network) -> IncidenceDecomposition:
    """Signed node-pipe incidence: -1 at the from-node row, +1 at the to-node row."""
    interior = network.interior_nodes
    supply = network.supply_nodes
    rows_i = {n: i for i, n in enumerate(interior)}
    rows_s = {n: i for i, n in enumerate(supply)}
    n_q = len(network.pipes)
    A0 = sp.lil_matrix((len(interior), n_q))
    AS = sp.lil_matrix((len(supply), n_q))
    for k, p in enumerate(network.pipes):
        for node, sign in ((p.from_node, -1.0), (p.to_node, 1.0)):
            if node in rows_s:
                AS[rows_s[node], k] = sign
            else:
                A0[rows_i[node], k] = sign
    return IncidenceDecomposition(A0.tocsr(), AS.tocsr(), interior, supply,
                                  tuple(p.id for p in network.pipes))


# --------------------------------------------------------------------------
# height profiles


def _extremum_indices(elev: np.ndarray) -> list[int]:
    diffs = np.diff(elev)
    signs = np.sign(diffs)
    # plateaus take the sign of the following nonzero difference
    nxt = 0.0
    for i in range(len(signs) - 1, -1, -1):
        if signs[i] == 0:
            signs[i] = nxt
        else:
            nxt = signs[i]
    keep = [0]
    for i in range(1, len(signs)):
        if signs[i] != 0 and signs[i - 1] != 0 and signs[i] != signs[i - 1]:
            keep.append(i)
    keep.append(len(elev) - 1)
    return keep


def expand_height_profile(pipe: PipeSpec, profile: Sequence[tuple[float, float]]) -> list[PipeSpec]:
    """Split ``pipe`` into virtual pipes between consecutive local elevation extrema.

    Profile endpoints always count as extrema.  Generated intermediate nodes
    are named ``<pipe>~<k>`` and virtual pipes ``<pipe>#<k>``.
    """
    if len(profile) < 2:
        raise NetworkError(f"pipe {pipe.id}: height profile needs at least 2 points")
    arr = np.asarray(profile, dtype=float)
    s, z = arr[:, 0], arr[:, 1]
    if s[0] != 0.0 or np.any(np.diff(s) <= 0):
        raise NetworkError(f"pipe {pipe.id}: profile arclengths must increase strictly from 0")
    if abs(s[-1] - pipe.length) > HEIGHT_TOL * max(1.0, pipe.length):
        raise NetworkError(f"pipe {pipe.id}: profile ends at {s[-1]} m but pipe length is {pipe.length} m")
    if abs((z[-1] - z[0]) - pipe.height_delta) > HEIGHT_TOL:
        raise NetworkError(
            f"pipe {pipe.id}: profile elevation change {z[-1] - z[0]} does not match height_delta {pipe.height_delta}")

    ext = _extremum_indices(z)
    if len(ext) == 2:
        return [pipe]
    nodes = [pipe.from_node] + [f"{pipe.id}~{k}" for k in range(1, len(ext) - 1)] + [pipe.to_node]
    out = []
    for k in range(len(ext) - 1):
        i, j = ext[k], ext[k + 1]
        last = k == len(ext) - 2
        # close the sums exactly on the final segment
        length = pipe.length - sum(v.length for v in out) if last else s[j] - s[i]
        dh = pipe.height_delta - sum(v.height_delta for v in out) if last else z[j] - z[i]
        out.append(PipeSpec(f"{pipe.id}#{k + 1}", nodes[k], nodes[k + 1], float(length),
                            pipe.diameter, float(dh), pipe.roughness))
    return out


def parse_profiles(text: str) -> dict[str, list[tuple[float, float]]]:
    """Read a ``.prof.csv`` file (rows ``pipe_id,arclength_m,elevation_m``)."""
    profiles: dict[str, list[tuple[float, float]]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        row = [c.strip() for c in line.split(",")]
        if len(row) != 3:
            raise NetworkError("profile rows have the form pipe_id,arclength_m,elevation_m", lineno, len(row) + 1)
        if row[1] == "arclength_m":
            continue
        profiles.setdefault(row[0], []).append(
            (_float(row[1], lineno, 2, "arclength_m"), _float(row[2], lineno, 3, "elevation_m")))
    return profiles


def apply_height_profiles(network: Network, profiles: dict[str, Sequence[tuple[float, float]]]) -> Network:
    """Replace every profiled pipe by its virtual-pipe chain."""
    unknown = set(profiles) - {p.id for p in network.pipes}
    if unknown:
        raise NetworkError(f"height profile for unknown pipe(s): {', '.join(sorted(unknown))}")
    pipes: list[PipeSpec] = []
    order: dict[str, None] = dict.fromkeys(network.nodes)
    for p in network.pipes:
        if p.id in profiles:
            chain = expand_height_profile(p, profiles[p.id])
            pipes += chain
            for v in chain:
                order.setdefault(v.to_node)
        else:
            pipes.append(p)
    return Network(tuple(order), tuple(pipes), network.supply_nodes, network.demand_nodes)


# --------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class Scenario:
    """Piecewise-linear boundary data for every port.

    Values are held constant after the last time sample.
    """

    horizon: float
    dt: float
    times: np.ndarray
    series: dict[str, np.ndarray]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "series", {k: np.asarray(v, dtype=float) for k, v in self.series.items()})
        if not self.horizon > 0:
            raise NetworkError("horizon T must be positive")
        if not self.dt > 0:
            raise NetworkError("step dt must be positive")
        if len(t) == 0 or t[0] != 0.0:
            raise NetworkError("missing t=0 row")
        if np.any(np.diff(t) <= 0):
            raise NetworkError("time not increasing")
        for port, values in self.series.items():
            if len(values) != len(t):
                raise NetworkError(f"port {port}: {len(values)} samples for {len(t)} times")

    @property
    def ports(self) -> tuple[str, ...]:
        return tuple(self.series)

    def value(self, port: str, t: float) -> float:
        return float(np.interp(t, self.times, self.series[port]))

    def values(self, ports: Sequence[str], t: float) -> np.ndarray:
        return np.array([np.interp(t, self.times, self.series[p]) for p in ports])

    def steady_inputs(self, network: Network) -> tuple[np.ndarray, np.ndarray]:
        """The t=0 supply pressures and demand fluxes in port order."""
        self.check_ports(network)
        s = np.array([self.series[n][0] for n in network.supply_nodes])
        d = np.array([self.series[n][0] for n in network.demand_nodes])
        return s, d

    def check_ports(self, network: Network) -> None:
        unknown = [p for p in self.series if p not in network.ports]
        if unknown:
            raise NetworkError(f"unknown port id(s): {', '.join(unknown)}")
        missing = [p for p in network.ports if p not in self.series]
        if missing:
            raise NetworkError(f"scenario has no column for port(s): {', '.join(missing)}")
        for n in network.supply_nodes:
            if np.any(self.series[n] <= 0):
                raise NetworkError(f"supply {n}: pressure samples must be positive")


def parse_scenario(text: str | Iterable[str], network: Network | None = None) -> Scenario:
    """Parse the ``.scn.csv`` dialect.

    Directive lines ``! T=<sec>`` and ``! dt=<sec>`` set horizon and step hint;
    the header row is ``t_s,<port>...``.  With ``network`` the port ids are
    checked against the network's supply and demand sets.
    """
    if not isinstance(text, str):
        text = "".join(text)
    horizon = dt = None
    header = None
    rows: list[list[float]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("!"):
            key, sep, val = line[1:].partition("=")
            key = key.strip()
            if not sep or key not in ("T", "dt"):
                raise NetworkError(f"unknown directive {line!r}", lineno, 1)
            v = _float(val.strip(), lineno, 1, key)
            if key == "T":
                horizon = v
            else:
                dt = v
            continue
        cells = [c.strip() for c in line.split(",")]
        if header is None:
            if cells[0] != "t_s":
                raise NetworkError("header row must start with t_s", lineno, 1)
            if len(set(cells[1:])) != len(cells) - 1:
                raise NetworkError("duplicate port column", lineno)
            header = cells[1:]
            continue
        if len(cells) != len(header) + 1:
            raise NetworkError(f"expected {len(header) + 1} fields, got {len(cells)}", lineno, len(cells) + 1)
        rows.append([_float(c, lineno, j + 1, "t_s" if j == 0 else header[j - 1]) for j, c in enumerate(cells)])
    if header is None:
        raise NetworkError("missing header row")
    if not rows:
        raise NetworkError("missing t=0 row")
    data = np.array(rows)
    times = data[:, 0]
    if times[0] != 0.0:
        raise NetworkError("missing t=0 row")
    if np.any(np.diff(times) <= 0):
        raise NetworkError("time not increasing")
    if horizon is None:
        horizon = float(times[-1])
    if dt is None:
        raise NetworkError("missing '! dt=<sec>' directive")
    scen = Scenario(horizon, dt, times, {p: data[:, j + 1] for j, p in enumerate(header)})
    if network is not None:
        scen.check_ports(network)
    return scen


def serialize_scenario(scenario: Scenario) -> str:
    buf = io.StringIO()
    buf.write(f"! T={_fmt(scenario.horizon)}\n! dt={_fmt(scenario.dt)}\n")
    ports = scenario.ports
    buf.write(",".join(("t_s",) + ports) + "\n")
    for i, t in enumerate(scenario.times):
        buf.write(",".join([_fmt(t)] + [_fmt(scenario.series[p][i]) for p in ports]) + "\n")
    return buf.getvalue()
