"""Network model: buses, branches, classical machines, partition, admittance.

Conventions
-----------
Everything is per-unit on a common system base. A machine is a constant EMF
magnitude behind its transient reactance and is represented structurally as
an extra "machine-internal" node connected to its terminal bus through a
branch of admittance 1/(j x'd); admittance assembly therefore never
special-cases machines. Loads are constant impedance: they live on the bus
diagonal and scale with the load factor alpha. A fault is a large shunt
(1e6 p.u.) added at the faulted bus during the fault stage and removed at
clearing, so the branch topology never changes.

Stages are indexed 0 = pre-fault, 1 = during fault, 2 = post-fault. The
pre- and post-fault matrices are identical (self-clearing fault).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DegenerateNetworkError, NonconvergenceError, StructuralError
from . import fileio

BUS_TYPES = ("machine-internal", "load", "boundary")
STAGES = ("pre", "fault", "post")
FAULT_ADMITTANCE = 1e6 + 0j


@dataclass(frozen=True)
class Bus:
    id: int
    type: str
    shunt: complex = 0j  # fixed shunt (line charging, compensation)
    load: complex = 0j   # constant-impedance load admittance at alpha = 1


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    y: complex  # series admittance


@dataclass(frozen=True)
class MachineParams:
    """Classical machine data.

    pm and e are the base-case (alpha = 1) mechanical power and EMF magnitude
    filled in by initialization; operating points at other load scales are
    produced by initialize_operating_point and do not read these fields.
    """

    bus: int        # machine-internal node id
    terminal: int   # network bus behind x'd
    inertia: float  # H, seconds
    damping: float
    xd_prime: float
    v_setpoint: float
    p_dispatch: float = 0.0
    slack: bool = False
    pm: float = math.nan
    e: float = math.nan


@dataclass(frozen=True)
class Partition:
    internal: tuple[int, ...]
    external: tuple[int, ...]
    tie_branches: tuple[int, ...]  # indices into NetworkModel.branches, ordered


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    machines: tuple[MachineParams, ...]
    partition: Partition
    base_frequency_hz: float = 60.0

    @property
    def omega_s(self) -> float:
        return 2.0 * math.pi * self.base_frequency_hz

    def index(self) -> dict[int, int]:
        return {bus.id: k for k, bus in enumerate(self.buses)}

    def is_internal(self, bus_id: int) -> bool:
        return bus_id in self.partition.internal

    def machine_indices_internal(self) -> list[int]:
        return [k for k, m in enumerate(self.machines) if self.is_internal(m.bus)]

    def machine_indices_external(self) -> list[int]:
        return [k for k, m in enumerate(self.machines) if not self.is_internal(m.bus)]


def validate_network(net: NetworkModel) -> None:
    """Raise StructuralError on any malformed network description."""
    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        raise StructuralError("duplicate bus ids")
    idx = net.index()
    for bus in net.buses:
        if bus.type not in BUS_TYPES:
            raise StructuralError(f"bus {bus.id}: unknown type {bus.type!r}")
    incident: dict[int, list[int]] = {i: [] for i in ids}
    for k, br in enumerate(net.branches):
        for end in (br.from_bus, br.to_bus):
            if end not in idx:
                raise StructuralError(f"branch {k} references unknown bus {end}")
        if br.from_bus == br.to_bus:
            raise StructuralError(f"branch {k} connects bus {br.from_bus} to itself")
        if br.y == 0:
            raise StructuralError(f"branch {k} has zero admittance")
        incident[br.from_bus].append(k)
        incident[br.to_bus].append(k)

    if not net.machines:
        raise StructuralError("network has no machines")
    machine_buses = [m.bus for m in net.machines]
    if len(set(machine_buses)) != len(machine_buses):
        raise StructuralError("two machines share a machine-internal node")
    for m in net.machines:
        if m.bus not in idx or net.buses[idx[m.bus]].type != "machine-internal":
            raise StructuralError(f"machine node {m.bus} missing or not machine-internal")
        if m.terminal not in idx or m.terminal == m.bus:
            raise StructuralError(f"machine at {m.bus}: bad terminal {m.terminal}")
        if not (m.inertia > 0 and m.xd_prime > 0):
            raise StructuralError(f"machine at {m.bus}: H and x'd must be positive")
        if net.buses[idx[m.bus]].load != 0:
            raise StructuralError(f"machine node {m.bus} must not carry load")
        links = incident[m.bus]
        if len(links) != 1:
            raise StructuralError(f"machine node {m.bus} must have exactly one branch")
        br = net.branches[links[0]]
        other = br.to_bus if br.from_bus == m.bus else br.from_bus
        if other != m.terminal:
            raise StructuralError(f"machine node {m.bus} is not connected to its terminal")
        expected = 1.0 / complex(0.0, m.xd_prime)
        if abs(br.y - expected) > 1e-9 * abs(expected):
            raise StructuralError(
                f"machine branch at {m.bus}: admittance inconsistent with x'd")
    for bus in net.buses:
        if bus.type == "machine-internal" and bus.id not in machine_buses:
            raise StructuralError(f"machine-internal bus {bus.id} hosts no machine")

    part = net.partition
    union = set(part.internal) | set(part.external)
    if set(part.internal) & set(part.external):
        raise StructuralError("partition sets overlap")
    if union != set(ids):
        raise StructuralError("partition does not cover all buses exactly once")
    if len(set(part.tie_branches)) != len(part.tie_branches):
        raise StructuralError("duplicate tie branch index")
    crossing = {
        k for k, br in enumerate(net.branches)
        if (br.from_bus in set(part.internal)) != (br.to_bus in set(part.internal))
    }
    if set(part.tie_branches) != crossing:
        raise StructuralError("tie list does not match the partition-crossing branches")
    for k in part.tie_branches:
        br = net.branches[k]
        for end in (br.from_bus, br.to_bus):
            if net.buses[idx[end]].type != "boundary":
                raise StructuralError(f"tie endpoint {end} must be typed boundary")
    slacks = [m for m in net.machines if m.slack]
    if len(slacks) != 1:
        raise StructuralError("exactly one machine must be the slack")
    if not (net.base_frequency_hz > 0):
        raise StructuralError("base frequency must be positive")


def build_admittance(
    net: NetworkModel,
    stage: str,
    *,
    alpha: float = 1.0,
    fault_bus: int | None = None,
) -> np.ndarray:
    """Assemble the full bus admittance matrix for one stage.

    Off-diagonals are -y per branch; the diagonal collects incident branch
    admittances, the fixed shunt, and the load admittance scaled by alpha.
    The fault stage adds FAULT_ADMITTANCE at the faulted bus.
    """
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}")
    if not alpha > 0:
        raise ConfigError(f"load scale must be positive, got {alpha}")
    idx = net.index()
    n = len(net.buses)
    y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        i, j = idx[br.from_bus], idx[br.to_bus]
        y[i, i] += br.y
        y[j, j] += br.y
        y[i, j] -= br.y
        y[j, i] -= br.y
    for k, bus in enumerate(net.buses):
        y[k, k] += bus.shunt + alpha * bus.load
    if stage == "fault":
        if fault_bus is None:
            raise ConfigError("fault stage requires a faulted bus")
        if fault_bus not in idx:
            raise ConfigError(f"faulted bus {fault_bus} is not in the network")
        k = idx[fault_bus]
        y[k, k] += FAULT_ADMITTANCE
    return y


def kron_reduce(y: np.ndarray, retained: Sequence[int]) -> np.ndarray:
    """Eliminate all nodes not in `retained` (ordered indices into y)."""
    n = y.shape[0]
    retained = list(retained)
    if len(set(retained)) != len(retained):
        raise StructuralError("retained indices must be unique")
    if any(not 0 <= r < n for r in retained):
        raise StructuralError("retained index out of range")
    eliminated = [k for k in range(n) if k not in set(retained)]
    if not eliminated:
        return y[np.ix_(retained, retained)].copy()
    y_rr = y[np.ix_(retained, retained)]
    y_re = y[np.ix_(retained, eliminated)]
    y_er = y[np.ix_(eliminated, retained)]
    y_ee = y[np.ix_(eliminated, eliminated)]
    try:
        x = np.linalg.solve(y_ee, y_er)
    except np.linalg.LinAlgError as exc:
        raise DegenerateNetworkError(f"eliminated block is singular: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise DegenerateNetworkError("eliminated block is numerically singular")
    return y_rr - y_re @ x


@dataclass(frozen=True)
class AdmittanceSet:
    """Stage-wise reduced admittance matrices on a fixed retained ordering."""

    pre: np.ndarray
    fault: np.ndarray
    post: np.ndarray
    retained: tuple[int, ...]  # bus ids, in matrix-axis order

    def stacked(self) -> np.ndarray:
        return np.stack([self.pre, self.fault, self.post])


def admittance_set(
    net: NetworkModel,
    fault_bus: int | None,
    retained_ids: Sequence[int],
    *,
    alpha: float = 1.0,
) -> AdmittanceSet:
    idx = net.index()
    retained = [idx[i] for i in retained_ids]
    pre = kron_reduce(build_admittance(net, "pre", alpha=alpha), retained)
    if fault_bus is None:
        fault = pre.copy()
    else:
        fault = kron_reduce(
            build_admittance(net, "fault", alpha=alpha, fault_bus=fault_bus), retained)
    return AdmittanceSet(pre=pre, fault=fault, post=pre.copy(), retained=tuple(retained_ids))


@dataclass(frozen=True)
class FaultScenario:
    """A self-clearing bus fault applied to one operating point."""

    id: int
    bus: int | None          # None means no fault (equilibrium run)
    t_fault: float
    t_clear: float
    alpha: float = 1.0

    def __post_init__(self):
        if self.bus is not None and not self.t_clear > self.t_fault:
            raise ConfigError(
                f"scenario {self.id}: clearing time must exceed fault time")
        if not 0.5 <= self.alpha <= 1.5:
            raise ConfigError(f"scenario {self.id}: load scale {self.alpha} outside [0.5, 1.5]")


# --- operating point -------------------------------------------------------

@dataclass(frozen=True)
class OperatingPoint:
    """Exact pre-fault equilibrium at one load scale.

    v_full holds the complex voltage of every bus in network order; the
    entry of a machine-internal node is the machine EMF E*exp(j delta0).
    """

    alpha: float
    v_full: np.ndarray
    emf: np.ndarray      # complex, per machine in net.machines order
    pm: np.ndarray
    pf_iterations: int

    @property
    def e_mag(self) -> np.ndarray:
        return np.abs(self.emf)

    @property
    def delta0(self) -> np.ndarray:
        return np.angle(self.emf)


def _pf_matrix(net: NetworkModel, alpha: float) -> tuple[list[int], dict[int, int], np.ndarray]:
    """Admittance of the network with machine nodes removed.

    Returns the kept bus positions (into net.buses), an id -> row map, and
    the matrix itself.
    """
    machine_nodes = {m.bus for m in net.machines}
    keep = [k for k, bus in enumerate(net.buses) if bus.id not in machine_nodes]
    pos = {net.buses[k].id: i for i, k in enumerate(keep)}
    n = len(keep)
    y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        if br.from_bus in machine_nodes or br.to_bus in machine_nodes:
            continue
        i, j = pos[br.from_bus], pos[br.to_bus]
        y[i, i] += br.y
        y[j, j] += br.y
        y[i, j] -= br.y
        y[j, i] -= br.y
    for i, k in enumerate(keep):
        bus = net.buses[k]
        y[i, i] += bus.shunt + alpha * bus.load
    return keep, pos, y


def solve_power_flow(
    net: NetworkModel,
    *,
    alpha: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> tuple[np.ndarray, int]:
    """Newton power flow on the network without machine nodes.

    Machine terminals are PV buses (the slack terminal fixes the angle
    reference); every other bus is PQ with zero injection since loads are
    constant impedance and sit inside Y. Returns the complex voltages of the
    non-machine buses in network order plus the iteration count.
    """
    keep, pos, y = _pf_matrix(net, alpha)
    n = len(keep)

    p_spec = np.zeros(n)
    is_pv = np.zeros(n, dtype=bool)
    is_slack = np.zeros(n, dtype=bool)
    vmag = np.ones(n)
    for m in net.machines:
        t = pos[m.terminal]
        vmag[t] = m.v_setpoint
        if m.slack:
            is_slack[t] = True
        else:
            is_pv[t] = True
            p_spec[t] += m.p_dispatch
    is_pq = ~(is_pv | is_slack)
    theta = np.zeros(n)

    ang_idx = np.flatnonzero(~is_slack)
    mag_idx = np.flatnonzero(is_pq)

    iterations = 0
    for iterations in range(1, max_iter + 1):
        v = vmag * np.exp(1j * theta)
        i_inj = y @ v
        s = v * np.conj(i_inj)
        mism = np.concatenate([s.real[ang_idx] - p_spec[ang_idx], s.imag[mag_idx]])
        if np.max(np.abs(mism)) < tol:
            return v, iterations
        m_mat = v[:, None] * np.conj(y * v[None, :])
        j_theta = 1j * (np.diag(s) - m_mat)
        j_vmag = (m_mat + np.diag(s)) / vmag[None, :]
        jac = np.block([
            [j_theta.real[np.ix_(ang_idx, ang_idx)], j_vmag.real[np.ix_(ang_idx, mag_idx)]],
            [j_theta.imag[np.ix_(mag_idx, ang_idx)], j_vmag.imag[np.ix_(mag_idx, mag_idx)]],
        ])
        try:
            step = np.linalg.solve(jac, -mism)
        except np.linalg.LinAlgError as exc:
            raise DegenerateNetworkError(f"power-flow Jacobian is singular: {exc}") from exc
        theta[ang_idx] += step[: ang_idx.size]
        vmag[mag_idx] += step[ang_idx.size:]
        if np.any(vmag <= 0) or not np.all(np.isfinite(vmag)):
            raise NonconvergenceError(
                "power flow left the feasible voltage region",
                residual=float(np.max(np.abs(mism))))
    raise NonconvergenceError(
        f"power flow did not converge in {max_iter} iterations",
        residual=float(np.max(np.abs(mism))))


def initialize_operating_point(net: NetworkModel, alpha: float = 1.0) -> OperatingPoint:
    """Solve the power flow and back out machine EMFs and mechanical powers."""
    v_net, iterations = solve_power_flow(net, alpha=alpha)
    _, pos, y = _pf_matrix(net, alpha)
    i_inj = y @ v_net

    emf = np.zeros(len(net.machines), dtype=complex)
    pm = np.zeros(len(net.machines))
    for k, m in enumerate(net.machines):
        t = pos[m.terminal]
        emf[k] = v_net[t] + 1j * m.xd_prime * i_inj[t]
        pm[k] = (v_net[t] * np.conj(i_inj[t])).real

    idx = net.index()
    v_full = np.zeros(len(net.buses), dtype=complex)
    for bus_id, i in pos.items():
        v_full[idx[bus_id]] = v_net[i]
    for k, m in enumerate(net.machines):
        v_full[idx[m.bus]] = emf[k]
    return OperatingPoint(alpha=alpha, v_full=v_full, emf=emf, pm=pm,
                          pf_iterations=iterations)


# --- serialization ---------------------------------------------------------

def _c2d(z: complex) -> dict:
    return {"re": float(z.real), "im": float(z.imag)}


def _d2c(d: dict) -> complex:
    return complex(d["re"], d["im"])


def network_to_dict(net: NetworkModel) -> dict:
    return {
        "base_frequency_hz": net.base_frequency_hz,
        "buses": [
            {"id": b.id, "type": b.type, "shunt": _c2d(b.shunt), "load": _c2d(b.load)}
            for b in net.buses
        ],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "y": _c2d(br.y)} for br in net.branches
        ],
        "machines": [
            {
                "bus": m.bus, "terminal": m.terminal, "inertia": m.inertia,
                "damping": m.damping, "xd_prime": m.xd_prime,
                "v_setpoint": m.v_setpoint, "p_dispatch": m.p_dispatch,
                "slack": m.slack, "pm": m.pm, "e": m.e,
            }
            for m in net.machines
        ],
        "partition": {
            "internal": list(net.partition.internal),
            "external": list(net.partition.external),
            "tie_branches": list(net.partition.tie_branches),
        },
    }


def network_from_dict(data: dict) -> NetworkModel:
    try:
        buses = tuple(
            Bus(id=int(b["id"]), type=str(b["type"]),
                shunt=_d2c(b.get("shunt", {"re": 0, "im": 0})),
                load=_d2c(b.get("load", {"re": 0, "im": 0})))
            for b in data["buses"]
        )
        branches = tuple(
            Branch(from_bus=int(br["from"]), to_bus=int(br["to"]), y=_d2c(br["y"]))
            for br in data["branches"]
        )
        machines = tuple(
            MachineParams(
                bus=int(m["bus"]), terminal=int(m["terminal"]),
                inertia=float(m["inertia"]), damping=float(m["damping"]),
                xd_prime=float(m["xd_prime"]), v_setpoint=float(m["v_setpoint"]),
                p_dispatch=float(m.get("p_dispatch", 0.0)), slack=bool(m.get("slack", False)),
                pm=float(m.get("pm", math.nan)), e=float(m.get("e", math.nan)))
            for m in data["machines"]
        )
        part = data["partition"]
        partition = Partition(
            internal=tuple(int(i) for i in part["internal"]),
            external=tuple(int(i) for i in part["external"]),
            tie_branches=tuple(int(i) for i in part["tie_branches"]),
        )
        net = NetworkModel(
            buses=buses, branches=branches, machines=machines, partition=partition,
            base_frequency_hz=float(data.get("base_frequency_hz", 60.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise StructuralError(f"malformed network description: {exc}") from exc
    validate_network(net)
    return net


def save_network(path: str, net: NetworkModel) -> None:
    fileio.write_json(path, network_to_dict(net))


def load_network(path: str) -> NetworkModel:
    return network_from_dict(fileio.read_json(path))


# --- shipped grids ---------------------------------------------------------

def _with_base_init(net: NetworkModel) -> NetworkModel:
    """Fill MachineParams.pm/e from the alpha = 1 operating point."""
    validate_network(net)
    op = initialize_operating_point(net, alpha=1.0)
    machines = tuple(
        dataclasses.replace(m, pm=float(op.pm[k]), e=float(op.e_mag[k]))
        for k, m in enumerate(net.machines)
    )
    return dataclasses.replace(net, machines=machines)


def _series(r: float, x: float) -> complex:
    return 1.0 / complex(r, x)


def two_machine() -> NetworkModel:
    """Two machines across one tie line.

    Deliberately heavy inertia: the single swing mode sits near 0.7 Hz so
    gradient checks against finite differences are dominated by the
    perturbation, not by time-discretization error.
    """
    buses = (
        Bus(1, "load"),
        Bus(2, "boundary", shunt=0.02j, load=complex(0.40, -0.15)),
        Bus(3, "boundary", shunt=0.02j, load=complex(0.30, -0.10)),
        Bus(4, "load"),
        Bus(101, "machine-internal"),
        Bus(104, "machine-internal"),
    )
    branches = (
        Branch(101, 1, _series(0.0, 0.20)),
        Branch(1, 2, _series(0.010, 0.15)),
        Branch(2, 3, _series(0.020, 0.30)),
        Branch(3, 4, _series(0.010, 0.15)),
        Branch(104, 4, _series(0.0, 0.25)),
    )
    machines = (
        MachineParams(bus=101, terminal=1, inertia=16.0, damping=1.5, xd_prime=0.20,
                      v_setpoint=1.03, slack=True),
        MachineParams(bus=104, terminal=4, inertia=20.0, damping=1.5, xd_prime=0.25,
                      v_setpoint=1.02, p_dispatch=0.35),
    )
    partition = Partition(internal=(3, 4, 104), external=(1, 2, 101), tie_branches=(2,))
    return _with_base_init(NetworkModel(buses, branches, machines, partition))


def ieee9() -> NetworkModel:
    """WSCC 3-machine 9-bus system with a stiff bulk-grid slack machine.

    Line charging is folded onto the endpoint bus shunts. The partition puts
    the machine-3 side (buses 3, 6, 8, 9) inside; ties are 4-6 and 7-8.
    Machine 1 models the surrounding interconnection aggregated onto the
    system base, so its inertia is far above single-unit values; it anchors
    the synchronous frame and post-fault trajectories return to the pre-fault
    operating point instead of keeping a permanent common-angle offset.
    """
    line_charge = {4: 0.167, 5: 0.241, 6: 0.258, 7: 0.2275, 8: 0.179, 9: 0.2835}
    loads = {5: complex(1.25, -0.50), 6: complex(0.90, -0.30), 8: complex(1.00, -0.35)}
    def bus(i: int, kind: str) -> Bus:
        return Bus(i, kind, shunt=complex(0.0, line_charge.get(i, 0.0)),
                   load=loads.get(i, 0j))
    buses = (
        bus(1, "load"), bus(2, "load"), bus(3, "load"),
        bus(4, "boundary"), bus(5, "load"), bus(6, "boundary"),
        bus(7, "boundary"), bus(8, "boundary"), bus(9, "load"),
        Bus(101, "machine-internal"), Bus(102, "machine-internal"),
        Bus(103, "machine-internal"),
    )
    branches = (
        Branch(101, 1, _series(0.0, 0.0608)),
        Branch(102, 2, _series(0.0, 0.1198)),
        Branch(103, 3, _series(0.0, 0.1813)),
        Branch(1, 4, _series(0.0, 0.0576)),
        Branch(2, 7, _series(0.0, 0.0625)),
        Branch(3, 9, _series(0.0, 0.0586)),
        Branch(4, 5, _series(0.010, 0.085)),
        Branch(4, 6, _series(0.017, 0.092)),    # tie
        Branch(5, 7, _series(0.032, 0.161)),
        Branch(6, 9, _series(0.039, 0.170)),
        Branch(7, 8, _series(0.0085, 0.072)),   # tie
        Branch(8, 9, _series(0.0119, 0.1008)),
    )
    machines = (
        MachineParams(bus=101, terminal=1, inertia=2000.0, damping=4000.0, xd_prime=0.0608,
                      v_setpoint=1.040, slack=True),
        MachineParams(bus=102, terminal=2, inertia=6.40, damping=12.80, xd_prime=0.1198,
                      v_setpoint=1.025, p_dispatch=1.63),
        MachineParams(bus=103, terminal=3, inertia=3.01, damping=6.02, xd_prime=0.1813,
                      v_setpoint=1.025, p_dispatch=0.85),
    )
    partition = Partition(
        internal=(3, 6, 8, 9, 103),
        external=(1, 2, 4, 5, 7, 101, 102),
        tie_branches=(7, 10),
    )
    return _with_base_init(NetworkModel(buses, branches, machines, partition))


def two_area() -> NetworkModel:
    """Four machines in two areas joined by a double-circuit tie.

    Loosely follows the classic two-area benchmark rescaled to the system
    base; area 1 (machines 1 and 2) is the internal region, so both tie
    circuits land on boundary buses 7 and 8.
    """
    xfmr = 0.0167
    def line(km: float) -> complex:
        return _series(0.0001 * km, 0.001 * km)
    charge = lambda km: 0.00175 * km / 2.0
    shunts = {
        5: charge(25), 6: charge(25) + charge(10), 7: charge(10) + 2 * charge(110) + 2.0,
        8: 4 * charge(110), 9: charge(10) + 2 * charge(110) + 3.5,
        10: charge(10) + charge(25), 11: charge(25),
    }
    loads = {7: complex(9.67, -1.00), 9: complex(17.67, -1.00)}
    def bus(i: int, kind: str) -> Bus:
        return Bus(i, kind, shunt=complex(0.0, shunts.get(i, 0.0)), load=loads.get(i, 0j))
    buses = (
        bus(1, "load"), bus(2, "load"), bus(3, "load"), bus(4, "load"),
        bus(5, "load"), bus(6, "load"), bus(7, "boundary"), bus(8, "boundary"),
        bus(9, "load"), bus(10, "load"), bus(11, "load"),
        Bus(101, "machine-internal"), Bus(102, "machine-internal"),
        Bus(103, "machine-internal"), Bus(104, "machine-internal"),
    )
    branches = (
        Branch(101, 1, _series(0.0, 0.0333)),
        Branch(102, 2, _series(0.0, 0.0333)),
        Branch(103, 3, _series(0.0, 0.0333)),
        Branch(104, 4, _series(0.0, 0.0333)),
        Branch(1, 5, _series(0.0, xfmr)),
        Branch(2, 6, _series(0.0, xfmr)),
        Branch(3, 11, _series(0.0, xfmr)),
        Branch(4, 10, _series(0.0, xfmr)),
        Branch(5, 6, line(25)),
        Branch(6, 7, line(10)),
        Branch(7, 8, line(110)),    # tie, circuit 1
        Branch(7, 8, line(110)),    # tie, circuit 2
        Branch(8, 9, line(110)),
        Branch(8, 9, line(110)),
        Branch(9, 10, line(10)),
        Branch(10, 11, line(25)),
    )
    machines = (
        MachineParams(bus=101, terminal=1, inertia=58.5, damping=58.5, xd_prime=0.0333,
                      v_setpoint=1.03, p_dispatch=7.0),
        MachineParams(bus=102, terminal=2, inertia=58.5, damping=58.5, xd_prime=0.0333,
                      v_setpoint=1.01, p_dispatch=7.0),
        MachineParams(bus=103, terminal=3, inertia=55.575, damping=55.575, xd_prime=0.0333,
                      v_setpoint=1.03, slack=True),
        MachineParams(bus=104, terminal=4, inertia=55.575, damping=55.575, xd_prime=0.0333,
                      v_setpoint=1.01, p_dispatch=7.0),
    )
    partition = Partition(
        internal=(1, 2, 5, 6, 7, 101, 102),
        external=(3, 4, 8, 9, 10, 11, 103, 104),
        tie_branches=(10, 11),
    )
    return _with_base_init(NetworkModel(buses, branches, machines, partition))


def lossless_variant(net: NetworkModel) -> NetworkModel:
    """Strip all conductance and damping; used by energy-conservation checks."""
    branches = tuple(
        Branch(br.from_bus, br.to_bus, 1.0 / complex(0.0, (1.0 / br.y).imag))
        for br in net.branches
    )
    buses = tuple(
        dataclasses.replace(b, shunt=complex(0.0, b.shunt.imag),
                            load=complex(0.0, b.load.imag))
        for b in net.buses
    )
    machines = tuple(dataclasses.replace(m, damping=0.0) for m in net.machines)
    return _with_base_init(dataclasses.replace(
        net, buses=buses, branches=branches, machines=machines))


GRID_BUILDERS = {
    "two_machine": two_machine,
    "ieee9": ieee9,
    "two_area": two_area,
}
