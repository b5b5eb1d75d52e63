"""Swing dynamics of the full grid and of the retained internal region.

State conventions
-----------------
Full system: x = [delta_1..delta_M, domega_1..domega_M] over all machines,
angles in radians in the synchronous frame, speeds as per-unit deviation.

Internal system: x_in = [delta, domega] over internal machines only; the
external region enters only through the tie-line currents
x_ex = [Re c_1, Im c_1, Re c_2, Im c_2, ...] (from-side, synchronous frame,
rectangular). Given x_ex, the internal algebraic network is solved for the
eliminated bus voltages, which makes the internal dynamics an explicit ODE
in (x_in, x_ex).

All coupling operators are precomputed per fault stage (0 pre, 1 during,
2 post) and stage-gathered at call time, so the same code path serves a
single trajectory or a batch of scenarios stacked on a leading axis.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DegenerateNetworkError, StructuralError
from .grid import NetworkModel, OperatingPoint, build_admittance, STAGES


def pack_complex(c: np.ndarray) -> np.ndarray:
    """Interleave a complex array (..., n) into reals (..., 2n)."""
    out = np.empty(c.shape[:-1] + (2 * c.shape[-1],))
    out[..., 0::2] = c.real
    out[..., 1::2] = c.imag
    return out


def unpack_complex(x: np.ndarray) -> np.ndarray:
    return x[..., 0::2] + 1j * x[..., 1::2]


def complex_op_as_real(op: np.ndarray) -> np.ndarray:
    """Real 2x2-block representation of a complex linear map (..., m, n)."""
    m, n = op.shape[-2], op.shape[-1]
    out = np.zeros(op.shape[:-2] + (2 * m, 2 * n))
    out[..., 0::2, 0::2] = op.real
    out[..., 0::2, 1::2] = -op.imag
    out[..., 1::2, 0::2] = op.imag
    out[..., 1::2, 1::2] = op.real
    return out


def align_batch(arr: np.ndarray, batched: bool, state_ndim: int) -> np.ndarray:
    """Reshape a per-machine attribute so it broadcasts against states.

    Batched attributes are (B, m); states may carry extra middle axes such
    as (B, n_times, d), so ones are inserted between the batch and machine
    axes.
    """
    if not batched:
        return arr
    extra = state_ndim - 2
    if extra <= 0:
        return arr
    return arr.reshape(arr.shape[0], *([1] * extra), arr.shape[-1])


def stage_select(op: np.ndarray, stage, batched: bool) -> np.ndarray:
    """Pick the per-stage operator; stage may be scalar or an index array.

    Unbatched ops have shape (3, ...); batched ops (B, 3, ...) with stage
    arrays shaped (B,) or (B, T).
    """
    if not batched:
        return op[stage]
    stage = np.asarray(stage)
    if stage.ndim == 0:
        return op[:, stage]
    b = op.shape[0]
    if stage.ndim == 1:
        return op[np.arange(b), stage]
    return op[np.arange(b)[:, None], stage]


def _stage_matrices(net: NetworkModel, alpha: float, fault_bus: int | None) -> list[np.ndarray]:
    pre = build_admittance(net, "pre", alpha=alpha)
    if fault_bus is None:
        fault = pre
    else:
        fault = build_admittance(net, "fault", alpha=alpha, fault_bus=fault_bus)
    return [pre, fault, pre]


def _check_fault_bus(net: NetworkModel, fault_bus: int | None) -> None:
    if fault_bus is None:
        return
    idx = net.index()
    if fault_bus not in idx:
        raise ConfigError(f"faulted bus {fault_bus} is not in the network")
    if fault_bus not in net.partition.internal:
        raise ConfigError(f"faulted bus {fault_bus} must lie in the internal region")
    if net.buses[idx[fault_bus]].type == "machine-internal":
        raise ConfigError(f"faulted bus {fault_bus} is a machine node")


def _branch_label(net: NetworkModel, branch_idx: int) -> str:
    br = net.branches[branch_idx]
    return f"{br.from_bus}-{br.to_bus}"


def _coi_projector(h: np.ndarray) -> np.ndarray:
    """Angles relative to the inertia-weighted center: P = I - 1 h^T / sum h."""
    w = h / np.sum(h)
    n = h.size
    return np.eye(n) - np.outer(np.ones(n), w)


def boundary_bus_ids(net: NetworkModel) -> list[int]:
    """Internal endpoints of the tie branches, tie order, de-duplicated."""
    internal = set(net.partition.internal)
    out: list[int] = []
    for k in net.partition.tie_branches:
        br = net.branches[k]
        end = br.to_bus if br.to_bus in internal else br.from_bus
        if end not in out:
            out.append(end)
    return out


@dataclass
class FullSystem:
    """Ground-truth simulator reduced to the machine nodes of the whole grid."""

    omega_s: float
    e: np.ndarray        # EMF magnitudes, per machine
    pm: np.ndarray
    h2: np.ndarray       # 2H
    d: np.ndarray
    delta0: np.ndarray
    yred: np.ndarray     # (3, M, M) reduced admittance per stage
    tie_op: np.ndarray   # (3, T, M) tie currents from machine voltages
    feat_op: np.ndarray  # (3, F, M) feature line currents
    bvolt_op: np.ndarray  # (3, nb, M) boundary bus voltages
    coi: np.ndarray      # (mi, mi) internal COI projector
    internal_machines: tuple[int, ...]
    tie_labels: tuple[str, ...]
    feature_labels: tuple[str, ...]
    machine_labels: tuple[str, ...]
    boundary_buses: tuple[int, ...]
    batched: bool = False

    @property
    def n_machines(self) -> int:
        return self.yred.shape[-1]

    def x0(self) -> np.ndarray:
        return np.concatenate([self.delta0, np.zeros_like(self.delta0)], axis=-1)

    def _split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        m = self.n_machines
        return x[..., :m], x[..., m:2 * m]

    def _attr(self, arr: np.ndarray, x: np.ndarray) -> np.ndarray:
        return align_batch(arr, self.batched, x.ndim)

    def rhs(self, x: np.ndarray, stage) -> np.ndarray:
        delta, domega = self._split(x)
        v = self._attr(self.e, x) * np.exp(1j * delta)
        y = stage_select(self.yred, stage, self.batched)
        i = np.einsum("...ij,...j->...i", y, v)
        pe = (v * np.conj(i)).real
        ddelta = self.omega_s * domega
        ddomega = (self._attr(self.pm, x) - pe - self._attr(self.d, x) * domega) \
            / self._attr(self.h2, x)
        return np.concatenate([ddelta, ddomega], axis=-1)

    def electrical_power(self, x: np.ndarray, stage) -> np.ndarray:
        delta, _ = self._split(x)
        v = self._attr(self.e, x) * np.exp(1j * delta)
        y = stage_select(self.yred, stage, self.batched)
        i = np.einsum("...ij,...j->...i", y, v)
        return (v * np.conj(i)).real

    def measure(self, x: np.ndarray, stage) -> tuple[np.ndarray, np.ndarray]:
        """Boundary observables (x_ex) and internal features (s_in)."""
        delta, domega = self._split(x)
        v = self._attr(self.e, x) * np.exp(1j * delta)
        ties = np.einsum("...ij,...j->...i",
                         stage_select(self.tie_op, stage, self.batched), v)
        x_ex = pack_complex(ties)
        idx = list(self.internal_machines)
        d_int = delta[..., idx]
        d_coi = np.einsum("ij,...j->...i", self.coi, d_int)
        feats = np.einsum("...ij,...j->...i",
                          stage_select(self.feat_op, stage, self.batched), v)
        s_in = np.concatenate([d_coi, domega[..., idx], pack_complex(feats)], axis=-1)
        return x_ex, s_in

    def internal_state(self, x: np.ndarray) -> np.ndarray:
        delta, domega = self._split(x)
        idx = list(self.internal_machines)
        return np.concatenate([delta[..., idx], domega[..., idx]], axis=-1)

    def boundary_voltages(self, x: np.ndarray, stage) -> np.ndarray:
        delta, _ = self._split(x)
        v = self._attr(self.e, x) * np.exp(1j * delta)
        return np.einsum("...ij,...j->...i",
                         stage_select(self.bvolt_op, stage, self.batched), v)

    def energy(self, x: np.ndarray) -> np.ndarray:
        """Swing energy; a conserved quantity only for lossless, undamped nets."""
        delta, domega = self._split(x)
        kinetic = 0.5 * self.omega_s * np.sum(
            self._attr(self.h2, x) * domega**2, axis=-1)
        b = self.yred[0].imag if not self.batched else self.yred[:, 0].imag
        if self.batched and delta.ndim > 2:
            b = b.reshape(b.shape[0], *([1] * (delta.ndim - 2)), *b.shape[-2:])
        e = self._attr(self.e, x)
        v_r = e * np.cos(delta)
        v_i = e * np.sin(delta)
        # -(1/2) sum_{k,l} E_k E_l B_kl cos(delta_k - delta_l), self terms constant
        cross = np.einsum("...k,...kl,...l->...", v_r, b, v_r) \
            + np.einsum("...k,...kl,...l->...", v_i, b, v_i)
        potential = -np.sum(self._attr(self.pm, x) * delta, axis=-1) - 0.5 * cross
        return kinetic + potential


def build_full_system(
    net: NetworkModel,
    op: OperatingPoint,
    fault_bus: int | None = None,
    feature_branches: Sequence[int] = (),
) -> FullSystem:
    _check_fault_bus(net, fault_bus)
    idx = net.index()
    mach_pos = [idx[m.bus] for m in net.machines]
    other_pos = [k for k in range(len(net.buses)) if k not in set(mach_pos)]
    n_m = len(mach_pos)
    internal = set(net.partition.internal)
    for k in feature_branches:
        br = net.branches[k]
        if not (br.from_bus in internal and br.to_bus in internal):
            raise ConfigError(f"feature branch {k} is not fully internal")

    b_ids = boundary_bus_ids(net)
    yred = []
    tie_op = []
    feat_op = []
    bv_op = []
    for y_full in _stage_matrices(net, op.alpha, fault_bus):
        y_mm = y_full[np.ix_(mach_pos, mach_pos)]
        y_mo = y_full[np.ix_(mach_pos, other_pos)]
        y_om = y_full[np.ix_(other_pos, mach_pos)]
        y_oo = y_full[np.ix_(other_pos, other_pos)]
        try:
            w = np.linalg.solve(y_oo, y_om)
        except np.linalg.LinAlgError as exc:
            raise DegenerateNetworkError(f"network reduction failed: {exc}") from exc
        yred.append(y_mm - y_mo @ w)
        # voltage of every bus as a linear map of machine voltages
        vfull = np.zeros((len(net.buses), n_m), dtype=complex)
        for col, p in enumerate(mach_pos):
            vfull[p, col] = 1.0
        vfull[other_pos, :] = -w
        def line_row(branch_idx: int) -> np.ndarray:
            br = net.branches[branch_idx]
            return br.y * (vfull[idx[br.from_bus]] - vfull[idx[br.to_bus]])
        tie_op.append(np.array([line_row(k) for k in net.partition.tie_branches]))
        feat_op.append(
            np.array([line_row(k) for k in feature_branches]).reshape(len(feature_branches), n_m))
        bv_op.append(np.array([vfull[idx[b]] for b in b_ids]).reshape(len(b_ids), n_m))

    h = np.array([m.inertia for m in net.machines])
    internal_machines = tuple(net.machine_indices_internal())
    if not internal_machines:
        raise StructuralError("no machine lies in the internal region")
    return FullSystem(
        omega_s=net.omega_s,
        e=op.e_mag.copy(),
        pm=op.pm.copy(),
        h2=2.0 * h,
        d=np.array([m.damping for m in net.machines]),
        delta0=op.delta0.copy(),
        yred=np.stack(yred),
        tie_op=np.stack(tie_op),
        feat_op=np.stack(feat_op),
        bvolt_op=np.stack(bv_op),
        coi=_coi_projector(h[list(internal_machines)]),
        internal_machines=internal_machines,
        tie_labels=tuple(_branch_label(net, k) for k in net.partition.tie_branches),
        feature_labels=tuple(_branch_label(net, k) for k in feature_branches),
        machine_labels=tuple(f"m{m.terminal}" for m in net.machines),
        boundary_buses=tuple(b_ids),
        batched=False,
    )


@dataclass
class InternalSystem:
    """Retained-region dynamics driven by tie-line currents.

    Feature vector s_in = [COI-relative internal angles, internal speed
    deviations, feature line currents (rectangular, interleaved)].
    """

    omega_s: float
    e: np.ndarray
    pm: np.ndarray
    h2: np.ndarray
    d: np.ndarray
    k_op: np.ndarray   # (3, mi, mi) machine-node reduced internal admittance
    g_op: np.ndarray   # (3, mi, T) machine current from tie currents
    f_m: np.ndarray    # (3, F, mi) feature currents from machine voltages
    f_j: np.ndarray    # (3, F, T) feature currents from tie currents
    bv_m: np.ndarray   # (3, nb, mi)
    bv_j: np.ndarray   # (3, nb, T)
    coi: np.ndarray
    x_in0: np.ndarray
    x_ex0: np.ndarray
    tie_labels: tuple[str, ...]
    feature_labels: tuple[str, ...]
    machine_labels: tuple[str, ...]
    boundary_buses: tuple[int, ...]
    batched: bool = False

    @property
    def n_machines(self) -> int:
        return self.k_op.shape[-1]

    @property
    def n_ties(self) -> int:
        return self.g_op.shape[-1]

    @property
    def n_features(self) -> int:
        return 2 * self.n_machines + 2 * self.f_m.shape[-2]

    def _split(self, x_in: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        m = self.n_machines
        return x_in[..., :m], x_in[..., m:2 * m]

    def _attr(self, arr: np.ndarray, x: np.ndarray) -> np.ndarray:
        return align_batch(arr, self.batched, x.ndim)

    def _currents(self, v: np.ndarray, x_ex: np.ndarray, stage) -> np.ndarray:
        c = unpack_complex(x_ex)
        k = stage_select(self.k_op, stage, self.batched)
        g = stage_select(self.g_op, stage, self.batched)
        return (np.einsum("...ij,...j->...i", k, v)
                + np.einsum("...ij,...j->...i", g, c))

    def rhs(self, x_in: np.ndarray, x_ex: np.ndarray, stage) -> np.ndarray:
        delta, domega = self._split(x_in)
        v = self._attr(self.e, x_in) * np.exp(1j * delta)
        pe = (v * np.conj(self._currents(v, x_ex, stage))).real
        ddelta = self.omega_s * domega
        ddomega = (self._attr(self.pm, x_in) - pe
                   - self._attr(self.d, x_in) * domega) / self._attr(self.h2, x_in)
        return np.concatenate([ddelta, ddomega], axis=-1)

    def jacobians(self, x_in: np.ndarray, x_ex: np.ndarray, stage
                  ) -> tuple[np.ndarray, np.ndarray]:
        """d(rhs)/dx_in and d(rhs)/dx_ex at one point (batch-aware)."""
        m = self.n_machines
        delta, _ = self._split(x_in)
        v = self._attr(self.e, x_in) * np.exp(1j * delta)
        k = stage_select(self.k_op, stage, self.batched)
        g = stage_select(self.g_op, stage, self.batched)
        c = unpack_complex(x_ex)
        i = (np.einsum("...ij,...j->...i", k, v)
             + np.einsum("...ij,...j->...i", g, c))
        cross = v[..., :, None] * np.conj(k * v[..., None, :])
        dpe_dd = cross.imag.copy()
        rows = np.arange(m)
        dpe_dd[..., rows, rows] -= (v * np.conj(i)).imag
        w = v[..., :, None] * np.conj(g)
        dpe_dex = np.empty(w.shape[:-1] + (2 * w.shape[-1],))
        dpe_dex[..., 0::2] = w.real
        dpe_dex[..., 1::2] = w.imag

        h2 = self._attr(self.h2, x_in)
        shape = x_in.shape[:-1]
        j_in = np.zeros(shape + (2 * m, 2 * m))
        j_in[..., rows, m + rows] = self.omega_s
        j_in[..., m:, :m] = -dpe_dd / h2[..., :, None]
        j_in[..., m + rows, m + rows] = -self._attr(self.d, x_in) / h2
        j_ex = np.zeros(shape + (2 * m, 2 * self.n_ties))
        j_ex[..., m:, :] = -dpe_dex / h2[..., :, None]
        return j_in, j_ex

    def features(self, x_in: np.ndarray, x_ex: np.ndarray, stage) -> np.ndarray:
        delta, domega = self._split(x_in)
        v = self._attr(self.e, x_in) * np.exp(1j * delta)
        c = unpack_complex(x_ex)
        d_coi = np.einsum("ij,...j->...i", self.coi, delta)
        feats = (np.einsum("...ij,...j->...i",
                           stage_select(self.f_m, stage, self.batched), v)
                 + np.einsum("...ij,...j->...i",
                             stage_select(self.f_j, stage, self.batched), c))
        return np.concatenate([d_coi, domega, pack_complex(feats)], axis=-1)

    def feature_jacobians(self, x_in: np.ndarray, stage) -> tuple[np.ndarray, np.ndarray]:
        """ds_in/dx_in and ds_in/dx_ex (batch-aware)."""
        m = self.n_machines
        delta, _ = self._split(x_in)
        v = self._attr(self.e, x_in) * np.exp(1j * delta)
        f_m = stage_select(self.f_m, stage, self.batched)
        f_j = stage_select(self.f_j, stage, self.batched)
        shape = x_in.shape[:-1]
        ds = self.n_features
        js_in = np.zeros(shape + (ds, 2 * m))
        js_in[..., :m, :m] = self.coi
        rows = np.arange(m)
        js_in[..., m + rows, m + rows] = 1.0
        dcur = f_m * (1j * v)[..., None, :]
        js_in[..., 2 * m::2, :m] = dcur.real
        js_in[..., 2 * m + 1::2, :m] = dcur.imag
        js_ex = np.zeros(shape + (ds, 2 * self.n_ties))
        js_ex[..., 2 * m:, :] = complex_op_as_real(f_j)
        return js_in, js_ex

    def boundary_voltages(self, x_in: np.ndarray, x_ex: np.ndarray, stage) -> np.ndarray:
        delta, _ = self._split(x_in)
        v = self._attr(self.e, x_in) * np.exp(1j * delta)
        c = unpack_complex(x_ex)
        return (np.einsum("...ij,...j->...i",
                          stage_select(self.bv_m, stage, self.batched), v)
                + np.einsum("...ij,...j->...i",
                            stage_select(self.bv_j, stage, self.batched), c))


def build_internal_system(
    net: NetworkModel,
    op: OperatingPoint,
    fault_bus: int | None = None,
    feature_branches: Sequence[int] = (),
) -> InternalSystem:
    _check_fault_bus(net, fault_bus)
    idx = net.index()
    internal = set(net.partition.internal)
    int_machines = net.machine_indices_internal()
    if not int_machines:
        raise StructuralError("no machine lies in the internal region")
    machine_nodes = {net.machines[k].bus for k in int_machines}
    int_pos = [k for k, bus in enumerate(net.buses) if bus.id in internal]
    # machine rows in net.machines order, not bus order
    mach_rows = [idx[net.machines[k].bus] for k in int_machines]
    u_rows = [k for k in int_pos if net.buses[k].id not in machine_nodes]
    u_ids = [net.buses[k].id for k in u_rows]
    u_pos = {bid: i for i, bid in enumerate(u_ids)}
    n_u = len(u_rows)
    ties = net.partition.tie_branches
    n_t = len(ties)

    for k in feature_branches:
        br = net.branches[k]
        if not (br.from_bus in internal and br.to_bus in internal):
            raise ConfigError(f"feature branch {k} is not fully internal")

    # signed scatter of tie currents onto internal buses
    s_mat = np.zeros((n_u, n_t))
    for col, k in enumerate(ties):
        br = net.branches[k]
        if br.to_bus in internal:
            s_mat[u_pos[br.to_bus], col] = 1.0
        else:
            s_mat[u_pos[br.from_bus], col] = -1.0

    b_ids = boundary_bus_ids(net)
    k_ops, g_ops, fm_ops, fj_ops, bvm_ops, bvj_ops = [], [], [], [], [], []
    for y_full in _stage_matrices(net, op.alpha, fault_bus):
        y_mm = y_full[np.ix_(mach_rows, mach_rows)]
        y_mu = y_full[np.ix_(mach_rows, u_rows)]
        y_um = y_full[np.ix_(u_rows, mach_rows)]
        y_uu = y_full[np.ix_(u_rows, u_rows)].copy()
        # the full matrix's boundary diagonals include the tie series terms;
        # with tie currents as inputs those must not appear in the internal solve
        for k in ties:
            br = net.branches[k]
            end = br.to_bus if br.to_bus in internal else br.from_bus
            y_uu[u_pos[end], u_pos[end]] -= br.y
        try:
            z = np.linalg.inv(y_uu)
        except np.linalg.LinAlgError as exc:
            raise DegenerateNetworkError(f"internal network is singular: {exc}") from exc
        vu_m = -z @ y_um
        vu_j = z @ s_mat.astype(complex)
        k_ops.append(y_mm + y_mu @ vu_m)
        g_ops.append(y_mu @ vu_j)

        n_int = len(int_pos)
        int_row = {net.buses[k].id: i for i, k in enumerate(int_pos)}
        vop_m = np.zeros((n_int, len(int_machines)), dtype=complex)
        vop_j = np.zeros((n_int, n_t), dtype=complex)
        for col, mk in enumerate(int_machines):
            vop_m[int_row[net.machines[mk].bus], col] = 1.0
        for bid in u_ids:
            vop_m[int_row[bid]] = vu_m[u_pos[bid]]
            vop_j[int_row[bid]] = vu_j[u_pos[bid]]
        fm = np.zeros((len(feature_branches), len(int_machines)), dtype=complex)
        fj = np.zeros((len(feature_branches), n_t), dtype=complex)
        for q, k in enumerate(feature_branches):
            br = net.branches[k]
            fm[q] = br.y * (vop_m[int_row[br.from_bus]] - vop_m[int_row[br.to_bus]])
            fj[q] = br.y * (vop_j[int_row[br.from_bus]] - vop_j[int_row[br.to_bus]])
        fm_ops.append(fm)
        fj_ops.append(fj)
        bvm_ops.append(np.array([vu_m[u_pos[b]] for b in b_ids]).reshape(len(b_ids), -1))
        bvj_ops.append(np.array([vu_j[u_pos[b]] for b in b_ids]).reshape(len(b_ids), -1))

    h = np.array([net.machines[k].inertia for k in int_machines])
    delta0 = op.delta0[int_machines]
    x_in0 = np.concatenate([delta0, np.zeros_like(delta0)])
    c0 = np.array([
        net.branches[k].y * (op.v_full[idx[net.branches[k].from_bus]]
                             - op.v_full[idx[net.branches[k].to_bus]])
        for k in ties
    ])
    return InternalSystem(
        omega_s=net.omega_s,
        e=op.e_mag[int_machines].copy(),
        pm=op.pm[int_machines].copy(),
        h2=2.0 * h,
        d=np.array([net.machines[k].damping for k in int_machines]),
        k_op=np.stack(k_ops),
        g_op=np.stack(g_ops),
        f_m=np.stack(fm_ops),
        f_j=np.stack(fj_ops),
        bv_m=np.stack(bvm_ops),
        bv_j=np.stack(bvj_ops),
        coi=_coi_projector(h),
        x_in0=x_in0,
        x_ex0=pack_complex(c0),
        tie_labels=tuple(_branch_label(net, k) for k in ties),
        feature_labels=tuple(_branch_label(net, k) for k in feature_branches),
        machine_labels=tuple(f"m{net.machines[k].terminal}" for k in int_machines),
        boundary_buses=tuple(b_ids),
        batched=False,
    )


_FULL_STACK_ATTRS = ("e", "pm", "h2", "d", "delta0", "yred", "tie_op", "feat_op", "bvolt_op")
_INTERNAL_STACK_ATTRS = ("e", "pm", "h2", "d", "k_op", "g_op", "f_m", "f_j",
                         "bv_m", "bv_j", "x_in0", "x_ex0")


def _stack(items, attrs):
    first = items[0]
    if any(it.batched for it in items):
        raise ValueError("cannot stack already-batched systems")
    changes = {name: np.stack([getattr(it, name) for it in items]) for name in attrs}
    changes["batched"] = True
    return dataclasses.replace(first, **changes)


def stack_full_systems(items: Sequence[FullSystem]) -> FullSystem:
    """Batch scenario systems on a leading axis (operating points may differ)."""
    return _stack(list(items), _FULL_STACK_ATTRS)


def stack_internal_systems(items: Sequence[InternalSystem]) -> InternalSystem:
    return _stack(list(items), _INTERNAL_STACK_ATTRS)
