"""Finite-volume IMPES solver for simplified three-phase black-oil flow.

Pressure is solved implicitly from the total-mobility elliptic equation with
two-point flux approximation and no-flow boundaries; water and gas balances
are advanced explicitly with upstream mobility weighting and automatic CFL
sub-stepping.  Gravity, capillary pressure, and compressibility are out of
scope; formation volume factors and the solution gas-oil ratio are constants,
which keeps the gas accumulation linear and conservation exactly checkable.

Units: md, ft, psia, cp, days; stb/day for liquids and scf/day for gas at
surface; reservoir volumes in barrels.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, GridError, Realization, ScalarField, write_field
from .wells import (
    B_WATER,
    C_DARCY,
    GAS_INJECTOR,
    PRODUCER,
    WATER_INJECTOR,
    WellSpec,
    well_index_geometric,
)

__all__ = [
    "FluidProps",
    "SimState",
    "Schedule",
    "ResidualNorms",
    "SimulationResult",
    "NumericalError",
    "SingularSystemError",
    "relative_permeability",
    "face_transmissibilities",
    "solve_pressure",
    "advance_saturations",
    "simulate",
    "pde_residual",
    "ic_residual",
]

BBL_PER_FT3 = 1.0 / 5.615
MAX_SUBSTEPS = 200_000
CFL_TARGET = 0.5
DIRECT_SOLVE_LIMIT = 20_000


class NumericalError(RuntimeError):
    pass


class SingularSystemError(NumericalError):
    pass


@dataclass(frozen=True)
class FluidProps:
    """Constant PVT and Corey relative-permeability description."""

    mu_w: float = 0.5
    mu_o: float = 2.0
    mu_g: float = 0.02
    b_o: float = 1.2  # rb/stb
    b_g: float = 0.005  # rb/scf
    r_so: float = 150.0  # scf/stb
    rho_g: float = 0.06  # lb/ft^3; cancels in the constant-density gas balance
    s_wc: float = 0.2
    s_or: float = 0.2
    n_w: float = 2.0
    n_o: float = 2.0
    n_g: float = 2.0
    k0_rw: float = 0.6
    k0_ro: float = 0.9
    k0_rg: float = 0.8

    def __post_init__(self):
        if min(self.mu_w, self.mu_o, self.mu_g, self.b_o, self.b_g, self.rho_g) <= 0:
            raise GridError("viscosities, FVFs, and gas density must be > 0")
        if self.r_so < 0:
            raise GridError("r_so must be >= 0")
        if not self.s_wc + self.s_or < 1.0:
            raise GridError("need s_wc + s_or < 1")
        if min(self.n_w, self.n_o, self.n_g) < 1.0:
            raise GridError("Corey exponents must be >= 1")
        if not all(0 < k <= 1 for k in (self.k0_rw, self.k0_ro, self.k0_rg)):
            raise GridError("endpoint relative permeabilities must be in (0, 1]")
        if 1.0 / self.b_g <= self.r_so / self.b_o:
            raise GridError("need 1/b_g > r_so/b_o so gas accumulation increases with Sg")


@dataclass
class SimState:
    """Dynamic fields at one time: pressure (psia) and water/gas saturations."""

    p: ScalarField
    sw: ScalarField
    sg: ScalarField
    time: float = 0.0

    def copy(self) -> "SimState":
        return SimState(self.p.copy(), self.sw.copy(), self.sg.copy(), self.time)

    @classmethod
    def uniform(cls, grid: Grid, pressure: float, sw: float, sg: float = 0.0) -> "SimState":
        n = grid.n_cells
        return cls(
            ScalarField(grid, np.full(n, float(pressure)), "p"),
            ScalarField(grid, np.full(n, float(sw)), "sw"),
            ScalarField(grid, np.full(n, float(sg)), "sg"),
            0.0,
        )


@dataclass(frozen=True)
class Schedule:
    """Integration step, report times, and shut-in intervals.

    Report times must be positive multiples of ``dt``.  A well is shut for the
    report step ending at t when any interval satisfies start < t <= end.
    """

    dt: float
    report_times: tuple
    shut_ins: tuple = ()  # (well_name, t_start, t_end)

    def __post_init__(self):
        if self.dt <= 0:
            raise GridError("schedule dt must be > 0")
        times = np.asarray(self.report_times, dtype=float)
        if times.size and (np.diff(times) <= 0).any():
            raise GridError("report times must be strictly increasing")
        for t in times:
            steps = t / self.dt
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise GridError(f"report time {t} is not a multiple of dt={self.dt}")

    @property
    def horizon(self) -> float:
        return self.report_times[-1] if self.report_times else 0.0

    def is_shut(self, well_name: str, t: float) -> bool:
        for name, t0, t1 in self.shut_ins:
            if name == well_name and t0 < t <= t1 + 1e-12:
                return True
        return False


@dataclass
class ResidualNorms:
    """Mean-squared discrete equation residuals over active cells."""

    r_pressure: float
    r_water: float
    r_gas: float
    r_ic: float = 0.0

    @property
    def total(self) -> float:
        return self.r_pressure + self.r_water + self.r_gas


@dataclass
class SimulationResult:
    grid: Grid
    states: list  # states[0] is the initial state; one more per report time
    report_times: np.ndarray
    completion_pressures: dict  # well name -> (n_report_steps, n_layers)

    @property
    def report_states(self) -> list:
        return self.states[1:]

    def save(self, directory) -> str:
        """Write per-report-time field files plus a JSON index."""
        os.makedirs(directory, exist_ok=True)
        index = {"report_times": list(map(float, self.report_times)), "steps": []}
        for idx, state in enumerate(self.states):
            entry = {"time": state.time}
            for tag, f in (("p", state.p), ("sw", state.sw), ("sg", state.sg)):
                fname = f"step_{idx:04d}.{tag}.field"
                write_field(ScalarField(self.grid, f.values, tag), os.path.join(directory, fname))
                entry[tag] = fname
            index["steps"].append(entry)
        path = os.path.join(directory, "index.json")
        with open(path, "w") as fh:
            json.dump(index, fh, indent=1)
        return path


# ---------------------------------------------------------------------------
# Relative permeability
# ---------------------------------------------------------------------------


def relative_permeability(sw, sg, fluid: FluidProps):
    """Corey relative permeabilities (krw, kro, krg); inputs may be arrays.

    Normalized saturations use the movable range 1 - S_wc - S_or and are
    clamped to [0, 1], so boundary excursions saturate instead of erroring.
    """
    sw = np.asarray(sw, dtype=np.float64)
    sg = np.asarray(sg, dtype=np.float64)
    so = 1.0 - sw - sg
    movable = 1.0 - fluid.s_wc - fluid.s_or
    sw_n = np.clip((sw - fluid.s_wc) / movable, 0.0, 1.0)
    so_n = np.clip((so - fluid.s_or) / movable, 0.0, 1.0)
    sg_n = np.clip(sg / movable, 0.0, 1.0)
    krw = fluid.k0_rw * sw_n**fluid.n_w
    kro = fluid.k0_ro * so_n**fluid.n_o
    krg = fluid.k0_rg * sg_n**fluid.n_g
    return krw, kro, krg


# ---------------------------------------------------------------------------
# Face geometry and transmissibilities
# ---------------------------------------------------------------------------

_FACE_CACHE: dict = {}


@dataclass(frozen=True)
class GridFaces:
    """Interior-face connectivity: lower/upper cell indices, area/distance."""

    lo: np.ndarray
    hi: np.ndarray
    area: np.ndarray
    dist: np.ndarray
    axis: np.ndarray  # 0, 1, 2 per face


def grid_faces(grid: Grid) -> GridFaces:
    key = grid._key()
    got = _FACE_CACHE.get(key)
    if got is not None:
        return got
    nx, ny, nz = grid.nx, grid.ny, grid.nz
    lo_list, hi_list, area_list, dist_list, ax_list = [], [], [], [], []
    idx = np.arange(grid.n_cells).reshape(nz, ny, nx)  # [k, j, i]
    specs = (
        (idx[:, :, :-1], idx[:, :, 1:], grid.dy * grid.dz, grid.dx, 0),
        (idx[:, :-1, :], idx[:, 1:, :], grid.dx * grid.dz, grid.dy, 1),
        (idx[:-1, :, :], idx[1:, :, :], grid.dx * grid.dy, grid.dz, 2),
    )
    for lo, hi, area, dist, ax in specs:
        lo = lo.ravel()
        hi = hi.ravel()
        lo_list.append(lo)
        hi_list.append(hi)
        area_list.append(np.full(lo.size, area))
        dist_list.append(np.full(lo.size, dist))
        ax_list.append(np.full(lo.size, ax, dtype=np.int8))
    faces = GridFaces(
        np.concatenate(lo_list), np.concatenate(hi_list),
        np.concatenate(area_list), np.concatenate(dist_list),
        np.concatenate(ax_list),
    )
    if len(_FACE_CACHE) >= 8:
        _FACE_CACHE.pop(next(iter(_FACE_CACHE)))
    _FACE_CACHE[key] = faces
    return faces


def geometric_face_factors(grid: Grid, perm_values: np.ndarray) -> np.ndarray:
    """Harmonic-permeability face factor K_harm * area / distance (md*ft).

    Faces touching an inactive cell carry zero.
    """
    f = grid_faces(grid)
    k1 = perm_values[f.lo]
    k2 = perm_values[f.hi]
    harm = np.where(k1 + k2 > 0, 2.0 * k1 * k2 / np.where(k1 + k2 > 0, k1 + k2, 1.0), 0.0)
    geo = harm * f.area / f.dist
    geo[~(grid.active[f.lo] & grid.active[f.hi])] = 0.0
    return geo


def fault_face_multipliers(grid: Grid, fault_sets, ftm: dict) -> np.ndarray:
    """Per-face multiplier from the realization's fault-set values (default 1)."""
    f = grid_faces(grid)
    mult = np.ones(f.lo.size)
    if not fault_sets:
        return mult
    # map (lower cell, axis) -> face position
    order = np.lexsort((f.lo, f.axis))
    keys = f.axis[order].astype(np.int64) * grid.n_cells + f.lo[order]
    for fs in fault_sets:
        ax = "xyz".index(fs.axis)
        cells = fs.lower_cells(grid)
        targets = np.int64(ax) * grid.n_cells + cells
        pos = np.searchsorted(keys, targets)
        ok = (pos < keys.size) & (keys[np.minimum(pos, keys.size - 1)] == targets)
        mult[order[pos[ok]]] *= ftm.get(fs.name, 1.0)
    return mult


@dataclass
class FaceTrans:
    """Per-face phase transmissibilities (surface-rate basis) and total
    (reservoir-rate basis), all including the Darcy constant and FTM."""

    grid: Grid
    t_water: np.ndarray  # stb/day/psi
    t_oil: np.ndarray  # stb/day/psi
    t_gas: np.ndarray  # scf/day/psi (free gas)
    t_total: np.ndarray  # rb/day/psi
    upwind_lo: np.ndarray  # bool: upstream cell is `lo`


def face_transmissibilities(
    grid: Grid,
    realization: Realization,
    state: SimState,
    fluid: FluidProps,
    fault_sets=(),
) -> FaceTrans:
    """Upwinded phase/total face transmissibilities for the current state.

    Upstream direction comes from the sign of the previous pressure solution
    (ties upstream the lower-index cell); the geometric part is the harmonic
    face factor scaled by the fault transmissibility multiplier.
    """
    f = grid_faces(grid)
    geo = geometric_face_factors(grid, realization.perm.values)
    geo = geo * fault_face_multipliers(grid, fault_sets, realization.ftm)
    up_lo = state.p.values[f.lo] >= state.p.values[f.hi]
    up_cell = np.where(up_lo, f.lo, f.hi)
    krw, kro, krg = relative_permeability(
        state.sw.values[up_cell], state.sg.values[up_cell], fluid
    )
    base = C_DARCY * geo
    t_w = base * krw / (fluid.mu_w * B_WATER)
    t_o = base * kro / (fluid.mu_o * fluid.b_o)
    t_g = base * krg / (fluid.mu_g * fluid.b_g)
    t_tot = base * (krw / fluid.mu_w + kro / fluid.mu_o + krg / fluid.mu_g)
    return FaceTrans(grid, t_w, t_o, t_g, t_tot, up_lo)


# ---------------------------------------------------------------------------
# Well source bookkeeping
# ---------------------------------------------------------------------------


@dataclass
class WellSources:
    """Per-cell pressure-equation sources: fixed reservoir-volume rates plus
    BHP couplings (diagonal and right-hand-side contributions)."""

    q_fixed: np.ndarray  # rb/day injected (+) per cell
    bhp_diag: np.ndarray  # rb/day/psi per cell
    bhp_rhs: np.ndarray  # rb/day per cell


def _well_mobility_weights(grid, realization, state, fluid, well):
    """Per-layer WI_geo and phase mobilities at the completion cells."""
    cells = well.cells(grid)
    wi = well_index_geometric(grid, realization.perm.values, well)
    krw, kro, krg = relative_permeability(
        state.sw.values[cells], state.sg.values[cells], fluid
    )
    lam_t = krw / fluid.mu_w + kro / fluid.mu_o + krg / fluid.mu_g  # rb basis
    return cells, wi, (krw, kro, krg), lam_t


def build_well_sources(
    grid: Grid,
    realization: Realization,
    state: SimState,
    fluid: FluidProps,
    wells,
    schedule: Schedule | None,
    t_step_end: float,
) -> WellSources:
    n = grid.n_cells
    src = WellSources(np.zeros(n), np.zeros(n), np.zeros(n))
    for w in wells:
        if schedule is not None and schedule.is_shut(w.name, t_step_end):
            continue
        cells, wi, _, lam_t = _well_mobility_weights(grid, realization, state, fluid, w)
        if w.is_producer:
            coupling = C_DARCY * wi * lam_t
            np.add.at(src.bhp_diag, cells, coupling)
            np.add.at(src.bhp_rhs, cells, coupling * w.control)
        else:
            b = B_WATER if w.kind == WATER_INJECTOR else fluid.b_g
            q_rb = w.control * b
            weights = wi * lam_t
            total = weights.sum()
            if total <= 0:
                weights = wi
                total = weights.sum()
            if total <= 0:
                continue
            np.add.at(src.q_fixed, cells, q_rb * weights / total)
    return src


# ---------------------------------------------------------------------------
# Pressure solve
# ---------------------------------------------------------------------------


def solve_pressure(
    grid: Grid,
    trans: FaceTrans,
    well_sources: WellSources,
    dirichlet: dict | None = None,
    previous: np.ndarray | None = None,
) -> ScalarField:
    """Solve the two-point-flux pressure system on active cells.

    Requires an anchor (a BHP coupling or a ``dirichlet`` fixed-pressure
    cell); raises SingularSystemError otherwise.  Direct factorization up to
    20k unknowns, conjugate gradients with diagonal preconditioning beyond;
    the relative linear residual is verified to 1e-9.
    """
    f = grid_faces(grid)
    active = grid.active
    n = grid.n_cells
    reduced = -np.ones(n, dtype=np.int64)
    act_idx = np.flatnonzero(active)
    reduced[act_idx] = np.arange(act_idx.size)
    m = act_idx.size

    dirichlet = dirichlet or {}
    has_anchor = bool(dirichlet) or np.any(well_sources.bhp_diag[act_idx] > 0)
    if not has_anchor:
        raise SingularSystemError(
            "pressure system has no anchor: need a BHP well or fixed-pressure cell"
        )

    keep = trans.t_total > 0
    lo = reduced[f.lo[keep]]
    hi = reduced[f.hi[keep]]
    tv = trans.t_total[keep]
    diag = np.zeros(m)
    np.add.at(diag, lo, tv)
    np.add.at(diag, hi, tv)
    diag += well_sources.bhp_diag[act_idx]
    rhs = well_sources.q_fixed[act_idx] + well_sources.bhp_rhs[act_idx]

    rows = np.concatenate([np.arange(m), lo, hi])
    cols = np.concatenate([np.arange(m), hi, lo])
    data = np.concatenate([diag, -tv, -tv])
    A = sp.csr_matrix((data, (rows, cols)), shape=(m, m))

    if dirichlet:
        # replace the row with identity and move the column to the RHS
        fixed_red = np.array([reduced[c] for c in dirichlet], dtype=np.int64)
        if (fixed_red < 0).any():
            raise GridError("dirichlet cell is inactive")
        fixed_val = np.array(list(dirichlet.values()), dtype=float)
        mask = np.zeros(m, dtype=bool)
        mask[fixed_red] = True
        A = A.tolil()
        rhs = rhs - A[:, fixed_red].toarray() @ fixed_val
        for r, v in zip(fixed_red, fixed_val):
            A.rows[r] = [r]
            A.data[r] = [1.0]
            rhs[r] = v
        col = A.T.tolil()
        for r in fixed_red:
            keep_self = rhs[r]
            col.rows[r] = [r]
            col.data[r] = [1.0]
            rhs[r] = keep_self
        A = col.T.tocsr()

    scale = max(np.abs(rhs).max(), 1e-300)
    try:
        if m <= DIRECT_SOLVE_LIMIT:
            p_act = spla.splu(A.tocsc()).solve(rhs)
        else:
            precond = sp.diags(1.0 / A.diagonal())
            p_act, info = spla.cg(A, rhs, rtol=1e-12, atol=1e-12 * scale, M=precond, maxiter=20 * m)
            if info != 0:
                raise NumericalError(f"pressure CG failed to converge (info={info})")
    except RuntimeError as exc:
        raise SingularSystemError(f"pressure solve failed: {exc}") from exc

    rel_res = np.linalg.norm(A @ p_act - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if not np.isfinite(rel_res) or rel_res > 1e-9:
        raise NumericalError(f"pressure solve residual {rel_res:.3e} exceeds 1e-9")

    p = np.zeros(n)
    p[act_idx] = p_act
    return ScalarField(grid, p, "p")


def assemble_pressure_matrix(grid: Grid, trans: FaceTrans, well_sources: WellSources):
    """Dense assembly of the active-cell pressure matrix (small grids only;
    used by tests to check symmetry and positive definiteness)."""
    f = grid_faces(grid)
    act_idx = np.flatnonzero(grid.active)
    reduced = -np.ones(grid.n_cells, dtype=np.int64)
    reduced[act_idx] = np.arange(act_idx.size)
    m = act_idx.size
    if m > 5000:
        raise GridError("dense assembly intended for small grids")
    A = np.zeros((m, m))
    for lo, hi, t in zip(f.lo, f.hi, trans.t_total):
        if t <= 0:
            continue
        a, b = reduced[lo], reduced[hi]
        A[a, a] += t
        A[b, b] += t
        A[a, b] -= t
        A[b, a] -= t
    A[np.arange(m), np.arange(m)] += well_sources.bhp_diag[act_idx]
    return A


# ---------------------------------------------------------------------------
# Saturation advance
# ---------------------------------------------------------------------------


@dataclass
class StepAccounting:
    """Volumes exchanged over one pressure step (surface units)."""

    water_injected: float = 0.0
    water_produced: float = 0.0
    gas_injected: float = 0.0
    gas_produced: float = 0.0
    oil_produced: float = 0.0
    substeps: int = 0


def _pore_volumes_rb(grid: Grid, realization: Realization) -> np.ndarray:
    pv = realization.poro.values * grid.cell_volume * BBL_PER_FT3
    return np.where(grid.active, np.maximum(pv, 1e-30), 1e-30)


def advance_saturations(
    state: SimState,
    pressure: ScalarField,
    trans: FaceTrans,
    realization: Realization,
    fluid: FluidProps,
    wells,
    dt: float,
    schedule: Schedule | None = None,
    accounting: StepAccounting | None = None,
) -> SimState:
    """Explicit upwind saturation update over one pressure step.

    The total volumetric face flux T_total * dp is frozen at the supplied
    pressure solution (so the per-cell volume balance of the pressure solve
    holds exactly throughout), and split into phase fluxes by the upstream
    cell's fractional flow re-evaluated each CFL sub-step.  Producer
    completions likewise keep their solve-time total volumetric rate, split
    by the completion cell's current mobilities.  Water and gas balances are
    integrated explicitly, gas saturation is backed out of the accumulation,
    oil saturation is implied, and saturations are clamped to the simplex.
    """
    grid = realization.grid
    f = grid_faces(grid)
    active = grid.active
    pv = _pore_volumes_rb(grid, realization)
    p = pressure.values
    dp = p[f.lo] - p[f.hi]
    u_total = trans.t_total * dp  # rb/day, positive lo -> hi, frozen
    up_cell = np.where(u_total >= 0.0, f.lo, f.hi)
    t_end = state.time + dt

    sw = state.sw.values.copy()
    sg = state.sg.values.copy()
    acct = accounting if accounting is not None else StepAccounting()

    live_wells = [
        w for w in wells
        if schedule is None or not schedule.is_shut(w.name, t_end)
    ]
    producer_data = []
    injector_data = []
    for w in live_wells:
        cells = w.cells(grid)
        wi = well_index_geometric(grid, realization.perm.values, w)
        if w.is_producer:
            krw, kro, krg = relative_permeability(
                state.sw.values[cells], state.sg.values[cells], fluid
            )
            lam_t = krw / fluid.mu_w + kro / fluid.mu_o + krg / fluid.mu_g
            q_rb = C_DARCY * wi * lam_t * np.maximum(p[cells] - w.control, 0.0)
            producer_data.append((w, cells, q_rb))
        else:
            injector_data.append((w, cells, wi))

    # CFL from the frozen volumetric fluxes: constant, so fix equal sub-steps
    out = np.zeros(grid.n_cells)
    np.add.at(out, f.lo, np.maximum(u_total, 0.0))
    np.add.at(out, f.hi, np.maximum(-u_total, 0.0))
    for _, cells, q_rb in producer_data:
        np.add.at(out, cells, q_rb)
    max_frac = float(np.where(active, out / pv, 0.0).max())
    n_sub = max(1, int(math.ceil(dt * max_frac / CFL_TARGET)))
    if n_sub > MAX_SUBSTEPS:
        raise NumericalError(
            f"CFL sub-stepping needs {n_sub} sub-steps (> {MAX_SUBSTEPS}); "
            "reduce the schedule dt or source rates"
        )
    dt_sub = dt / n_sub
    denom = 1.0 / fluid.b_g - fluid.r_so / fluid.b_o

    for _ in range(n_sub):
        acct.substeps += 1
        krw, kro, krg = relative_permeability(sw[up_cell], sg[up_cell], fluid)
        lam_w = krw / fluid.mu_w
        lam_o = kro / fluid.mu_o
        lam_g = krg / fluid.mu_g
        lam_t = lam_w + lam_o + lam_g
        safe = np.where(lam_t > 0.0, lam_t, 1.0)
        flux_w = np.where(lam_t > 0.0, lam_w / safe * u_total, 0.0) / B_WATER  # stb/day
        flux_o = np.where(lam_t > 0.0, lam_o / safe * u_total, 0.0) / fluid.b_o
        flux_g = np.where(lam_t > 0.0, lam_g / safe * u_total, 0.0) / fluid.b_g
        flux_g = flux_g + fluid.r_so * flux_o  # scf/day incl. solution gas

        inj_w = np.zeros(grid.n_cells)
        inj_g = np.zeros(grid.n_cells)
        prod_w = np.zeros(grid.n_cells)
        prod_o = np.zeros(grid.n_cells)
        prod_g = np.zeros(grid.n_cells)
        for w, cells, wi in injector_data:
            krw_c, kro_c, krg_c = relative_permeability(sw[cells], sg[cells], fluid)
            lam = krw_c / fluid.mu_w + kro_c / fluid.mu_o + krg_c / fluid.mu_g
            weights = wi * lam
            total = weights.sum()
            if total <= 0:
                weights, total = wi, wi.sum()
            if total <= 0:
                continue
            share = w.control * weights / total
            if w.kind == WATER_INJECTOR:
                np.add.at(inj_w, cells, share)
            else:
                np.add.at(inj_g, cells, share)
        for w, cells, q_rb in producer_data:
            krw_c, kro_c, krg_c = relative_permeability(sw[cells], sg[cells], fluid)
            lam_w_c = krw_c / fluid.mu_w
            lam_o_c = kro_c / fluid.mu_o
            lam_g_c = krg_c / fluid.mu_g
            lam_t_c = lam_w_c + lam_o_c + lam_g_c
            safe_c = np.where(lam_t_c > 0.0, lam_t_c, 1.0)
            qw = np.where(lam_t_c > 0.0, lam_w_c / safe_c * q_rb, 0.0) / B_WATER
            qo = np.where(lam_t_c > 0.0, lam_o_c / safe_c * q_rb, 0.0) / fluid.b_o
            qg = np.where(lam_t_c > 0.0, lam_g_c / safe_c * q_rb, 0.0) / fluid.b_g
            qg = qg + fluid.r_so * qo
            np.add.at(prod_w, cells, qw)
            np.add.at(prod_o, cells, qo)
            np.add.at(prod_g, cells, qg)

        net_w = np.zeros(grid.n_cells)  # stb/day
        np.add.at(net_w, f.lo, -flux_w)
        np.add.at(net_w, f.hi, flux_w)
        net_w += inj_w - prod_w
        net_g = np.zeros(grid.n_cells)  # scf/day
        np.add.at(net_g, f.lo, -flux_g)
        np.add.at(net_g, f.hi, flux_g)
        net_g += inj_g - prod_g

        gas_acc = pv * (sg / fluid.b_g + fluid.r_so * (1.0 - sw - sg) / fluid.b_o)
        sw = sw + dt_sub * net_w * B_WATER / pv
        gas_acc = gas_acc + dt_sub * net_g
        sg = (gas_acc / pv - fluid.r_so * (1.0 - sw) / fluid.b_o) / denom

        np.clip(sw, 0.0, 1.0, out=sw)
        np.clip(sg, 0.0, None, out=sg)
        np.minimum(sg, 1.0 - sw, out=sg)
        sw[~active] = state.sw.values[~active]
        sg[~active] = state.sg.values[~active]

        acct.water_injected += dt_sub * inj_w.sum()
        acct.water_produced += dt_sub * prod_w.sum()
        acct.gas_injected += dt_sub * inj_g.sum()
        acct.gas_produced += dt_sub * prod_g.sum()
        acct.oil_produced += dt_sub * prod_o.sum()

    return SimState(
        ScalarField(grid, p.copy(), "p"),
        ScalarField(grid, sw, "sw"),
        ScalarField(grid, sg, "sg"),
        t_end,
    )


# ---------------------------------------------------------------------------
# Time marching
# ---------------------------------------------------------------------------


def simulate(
    realization: Realization,
    fluid: FluidProps,
    wells,
    schedule: Schedule,
    initial: SimState,
    fault_sets=(),
) -> SimulationResult:
    """March the IMPES scheme to every report time; deterministic.

    ``states[0]`` is the initial state; each report time appends a state whose
    pressure is the solution used over the final step into that time.
    """
    grid = realization.grid
    for fld in (realization.perm, realization.poro, initial.p, initial.sw, initial.sg):
        if fld.grid._key() != grid._key():
            raise GridError("realization/state fields live on different grids")
    for w in wells:
        w.validate_location(grid)

    state = initial.copy()
    states = [initial.copy()]
    completion_pressures = {w.name: [] for w in wells}
    n_report = len(schedule.report_times)
    t_prev = 0.0
    for rep_idx in range(n_report):
        t_rep = schedule.report_times[rep_idx]
        n_steps = int(round((t_rep - t_prev) / schedule.dt))
        for _ in range(n_steps):
            t_end = state.time + schedule.dt
            sources = build_well_sources(grid, realization, state, fluid, wells, schedule, t_end)
            trans = face_transmissibilities(grid, realization, state, fluid, fault_sets)
            p = solve_pressure(grid, trans, sources)
            state = advance_saturations(
                state, p, trans, realization, fluid, wells, schedule.dt, schedule
            )
        for w in wells:
            completion_pressures[w.name].append(state.p.values[w.cells(grid)].copy())
        states.append(state.copy())
        t_prev = t_rep
    return SimulationResult(
        grid,
        states,
        np.asarray(schedule.report_times, dtype=float),
        {k: np.asarray(v) for k, v in completion_pressures.items()},
    )


# ---------------------------------------------------------------------------
# Discrete residual diagnostics
# ---------------------------------------------------------------------------


def _divergence(grid: Grid, face_flux: np.ndarray) -> np.ndarray:
    """Net inflow per cell from signed face fluxes (positive lo -> hi)."""
    f = grid_faces(grid)
    net = np.zeros(grid.n_cells)
    np.add.at(net, f.lo, -face_flux)
    np.add.at(net, f.hi, face_flux)
    return net


def pde_residual(
    state_prev: SimState,
    state_next: SimState,
    dt: float,
    realization: Realization,
    fluid: FluidProps,
    wells,
    schedule: Schedule | None = None,
    fault_sets=(),
    initial: SimState | None = None,
) -> ResidualNorms:
    """Discrete residual norms of the pressure/water/gas equations.

    Uses the solver's stencils: mobilities upwinded from ``state_prev``
    saturations with ``state_next``'s pressure, producer rates from the same
    pressure.  Each component is the squared residual averaged over active
    cells; per-cell residuals are volume-normalized (units 1/day).
    """
    grid = realization.grid
    f = grid_faces(grid)
    active = grid.active
    n_s = max(int(active.sum()), 1)
    pv = _pore_volumes_rb(grid, realization)
    vol_rb = grid.cell_volume * BBL_PER_FT3

    eval_state = SimState(state_next.p, state_prev.sw, state_prev.sg, state_prev.time)
    trans = face_transmissibilities(grid, realization, eval_state, fluid, fault_sets)
    dp = state_next.p.values[f.lo] - state_next.p.values[f.hi]

    t_end = state_next.time if state_next.time > 0 else dt
    live = [w for w in wells if schedule is None or not schedule.is_shut(w.name, t_end)]
    q_w = np.zeros(grid.n_cells)  # stb/day
    q_g = np.zeros(grid.n_cells)  # scf/day
    q_rb = np.zeros(grid.n_cells)  # rb/day total
    p_now = state_next.p.values
    for w in live:
        cells = w.cells(grid)
        wi = well_index_geometric(grid, realization.perm.values, w)
        if w.is_producer:
            krw, kro, krg = relative_permeability(
                state_prev.sw.values[cells], state_prev.sg.values[cells], fluid
            )
            dp_w = np.maximum(p_now[cells] - w.control, 0.0)
            base = C_DARCY * wi * dp_w
            qw = base * krw / (fluid.mu_w * B_WATER)
            qo = base * kro / (fluid.mu_o * fluid.b_o)
            qg = base * krg / (fluid.mu_g * fluid.b_g) + fluid.r_so * qo
            np.add.at(q_w, cells, -qw)
            np.add.at(q_g, cells, -qg)
            np.add.at(q_rb, cells, -(qw * B_WATER + qo * fluid.b_o
                                     + (qg - fluid.r_so * qo) * fluid.b_g))
        else:
            krw, kro, krg = relative_permeability(
                state_prev.sw.values[cells], state_prev.sg.values[cells], fluid
            )
            lam_t = krw / fluid.mu_w + kro / fluid.mu_o + krg / fluid.mu_g
            weights = wi * lam_t
            total = weights.sum()
            if total <= 0:
                weights, total = wi, wi.sum()
            if total <= 0:
                continue
            share = w.control * weights / total
            if w.kind == WATER_INJECTOR:
                np.add.at(q_w, cells, share)
                np.add.at(q_rb, cells, share * B_WATER)
            else:
                np.add.at(q_g, cells, share)
                np.add.at(q_rb, cells, share * fluid.b_g)

    # pressure equation: -div(T grad p) - Q = 0, reservoir-volume basis
    res_p = (-_divergence(grid, trans.t_total * dp) - q_rb) / vol_rb
    # water: phi dSw/dt - div(T_w grad p) - Q_w = 0
    dsw = (state_next.sw.values - state_prev.sw.values) / dt
    res_w = (pv * dsw / B_WATER - _divergence(grid, trans.t_water * dp) - q_w) / vol_rb
    # gas: d/dt[phi(Sg/Bg + Rso*So/Bo)] - div((T_g + Rso*T_o) grad p) - Q_g = 0
    def gas_acc(s):
        so = 1.0 - s.sw.values - s.sg.values
        return pv * (s.sg.values / fluid.b_g + fluid.r_so * so / fluid.b_o)

    dgas = (gas_acc(state_next) - gas_acc(state_prev)) / dt
    flux_g = (trans.t_gas + fluid.r_so * trans.t_oil) * dp
    res_g = (dgas - _divergence(grid, flux_g) - q_g) / vol_rb

    def msq(r):
        return float(np.sum(np.where(active, r, 0.0) ** 2) / n_s)

    r_ic = ic_residual(state_next, initial) if initial is not None else 0.0
    return ResidualNorms(msq(res_p), msq(res_w), msq(res_g), r_ic)


def ic_residual(state: SimState, reference: SimState) -> float:
    """Mean-squared mismatch of (sw, p, sg) against a reference state."""
    active = state.p.grid.active
    n_s = max(int(active.sum()), 1)
    total = 0.0
    for a, b in ((state.sw, reference.sw), (state.p, reference.p), (state.sg, reference.sg)):
        diff = np.where(active, a.values - b.values, 0.0)
        total += float(diff @ diff) / n_s
    return total
