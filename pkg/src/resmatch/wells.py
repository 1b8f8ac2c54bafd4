"""Peaceman analytical well model, well bookkeeping, rate series, and the
z-averaged feature rows consumed by the rate surrogate.

Oilfield units throughout: md, ft, psia, cp, stb/day for liquids, scf/day for
gas.  ``peaceman_rate`` is the bare radial-inflow formula; the Darcy unit
constant is applied where rates are integrated against grid quantities.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, GridError, Realization

__all__ = [
    "WellSpec",
    "RateSeries",
    "WellFeatures",
    "peaceman_rate",
    "equivalent_radius",
    "build_well_features",
    "rates_from_states",
    "PHASES",
    "C_DARCY",
]

PHASES = ("oil", "water", "gas")  # fixed observable order: wopr, wwpr, wgpr
C_DARCY = 1.127e-3  # md*ft*psi/cp -> bbl/day
B_WATER = 1.0  # water formation volume factor, rb/stb

PRODUCER = "producer"
WATER_INJECTOR = "water-injector"
GAS_INJECTOR = "gas-injector"


class WellError(ValueError):
    pass


@dataclass(frozen=True)
class WellSpec:
    """A vertical well completed over ``k_range`` layers at column (i, j).

    Producers are bottom-hole-pressure controlled, injectors rate controlled.
    ``control`` is the BHP in psia for producers, the surface rate (stb/day of
    water or scf/day of gas) for injectors.
    """

    name: str
    kind: str
    i: int
    j: int
    k_range: tuple  # inclusive (k_lo, k_hi)
    control: float
    r_w: float = 0.35
    skin: float = 0.0

    def __post_init__(self):
        if self.kind not in (PRODUCER, WATER_INJECTOR, GAS_INJECTOR):
            raise WellError(f"well {self.name!r}: unknown kind {self.kind!r}")
        if len(self.k_range) != 2 or self.k_range[1] < self.k_range[0]:
            raise WellError(f"well {self.name!r}: bad k_range {self.k_range}")
        if self.r_w <= 0:
            raise WellError(f"well {self.name!r}: r_w must be > 0")

    @property
    def is_producer(self) -> bool:
        return self.kind == PRODUCER

    def validate_location(self, grid: Grid) -> None:
        if not (0 <= self.i < grid.nx and 0 <= self.j < grid.ny):
            raise WellError(f"well {self.name!r}: location ({self.i},{self.j}) outside grid")
        if not (0 <= self.k_range[0] and self.k_range[1] < grid.nz):
            raise WellError(f"well {self.name!r}: k_range {self.k_range} outside nz={grid.nz}")

    def cells(self, grid: Grid) -> np.ndarray:
        """Linear indices of the completion cells."""
        self.validate_location(grid)
        ks = np.arange(self.k_range[0], self.k_range[1] + 1)
        return self.i + grid.nx * self.j + grid.nx * grid.ny * ks

    def completion_centroid(self, grid: Grid) -> np.ndarray:
        coords = grid.cell_coords()
        return coords[self.cells(grid)].mean(axis=0)


def peaceman_rate(k_abs, k_r, h, p_avg, p_wf, mu, B, r_e, r_w, s) -> float:
    """Radial-inflow rate ``2*pi*k*kr*h*(p_avg - p_wf) / (mu*B*(ln(re/rw) + s))``.

    Positive values are production (cell pressure above bottom-hole pressure).
    """
    if not r_e > r_w > 0:
        raise WellError(f"need r_e > r_w > 0, got r_e={r_e}, r_w={r_w}")
    if mu <= 0 or B <= 0:
        raise WellError("mu and B must be > 0")
    log_term = math.log(r_e / r_w) + s
    if log_term <= 0:
        raise WellError(f"non-positive Peaceman denominator: ln(re/rw)+s = {log_term}")
    return 2.0 * math.pi * k_abs * k_r * h * (p_avg - p_wf) / (mu * B * log_term)


def equivalent_radius(grid: Grid) -> float:
    """Isotropic Peaceman equivalent drainage radius ``0.14*sqrt(dx^2 + dy^2)``."""
    return 0.14 * math.sqrt(grid.dx**2 + grid.dy**2)


def well_index_geometric(grid: Grid, perm_values: np.ndarray, well: WellSpec) -> np.ndarray:
    """Per-completion-layer geometric well index ``2*pi*k*dz / (ln(re/rw)+s)``,
    in md*ft (multiply by C_DARCY and a mobility to get bbl/day/psi)."""
    cells = well.cells(grid)
    r_e = equivalent_radius(grid)
    log_term = math.log(r_e / well.r_w) + well.skin
    if log_term <= 0:
        raise WellError(f"well {well.name!r}: non-positive ln(re/rw)+skin")
    wi = 2.0 * math.pi * perm_values[cells] * grid.dz / log_term
    wi[~grid.active[cells]] = 0.0
    return wi


# ---------------------------------------------------------------------------
# Rate series
# ---------------------------------------------------------------------------


@dataclass
class RateSeries:
    """Per-producer oil/water/gas production rates at each report step.

    ``data`` has shape (T, 3, N_pr) ordered (time, phase, well); flattening
    preserves that order, giving a vector of length T*3*N_pr.
    """

    producers: tuple  # producer names, fixed order
    times: np.ndarray  # report times, days
    data: np.ndarray  # (T, 3, n_pr)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.data = np.asarray(self.data, dtype=np.float64)
        expected = (self.times.size, len(PHASES), len(self.producers))
        if self.data.shape != expected:
            raise WellError(f"rate data shape {self.data.shape}, expected {expected}")

    def flatten(self) -> np.ndarray:
        return self.data.reshape(-1).copy()

    @classmethod
    def unflatten(cls, vec, producers, times) -> "RateSeries":
        vec = np.asarray(vec, dtype=np.float64)
        shape = (len(times), len(PHASES), len(producers))
        if vec.size != int(np.prod(shape)):
            raise WellError(f"vector of length {vec.size} cannot reshape to {shape}")
        return cls(tuple(producers), np.asarray(times, float), vec.reshape(shape).copy())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "well", "phase", "rate"])
            for t_idx, t in enumerate(self.times):
                for p_idx, phase in enumerate(PHASES):
                    for w_idx, well in enumerate(self.producers):
                        writer.writerow([t, well, phase, self.data[t_idx, p_idx, w_idx]])

    def to_vec_file(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(np.ascontiguousarray(self.flatten(), dtype="<f8").tobytes())


@dataclass
class WellFeatures:
    """Algorithm inputs for the rate surrogate: one 5-entry row per producer
    per report step: [z-avg perm, producer-avg z-avg pressure, z-avg sw,
    z-avg sg, so], all-zero under shut-in.

    ``X`` has shape (T, N_pr, 5); ``shut`` is the matching boolean mask.
    """

    producers: tuple
    times: np.ndarray
    X: np.ndarray  # (T, n_pr, 5)
    shut: np.ndarray  # (T, n_pr) bool

    COLUMNS = ("perm", "pressure", "sw", "sg", "so")


def _is_shut(schedule, well_name: str, t: float) -> bool:
    if schedule is None:
        return False
    return schedule.is_shut(well_name, t)


def build_well_features(
    realization: Realization, states, wells, schedule=None
) -> WellFeatures:
    """Build surrogate feature rows from report-step states.

    Permeability and saturations are averaged over each producer's completion
    layers; pressure is completion-averaged then averaged over all producers
    (the same value enters every producer's row).  Shut-in rows are zeroed.
    """
    grid = realization.grid
    producers = [w for w in wells if w.is_producer]
    if not producers:
        raise WellError("no producers among wells")
    for w in producers:
        w.validate_location(grid)
    times = np.asarray([s.time for s in states], dtype=np.float64)
    n_t, n_pr = times.size, len(producers)
    X = np.zeros((n_t, n_pr, 5))
    shut = np.zeros((n_t, n_pr), dtype=bool)
    cell_sets = [w.cells(grid) for w in producers]
    kavg = np.array([realization.perm.values[c].mean() for c in cell_sets])
    for t_idx, state in enumerate(states):
        p, sw, sg = state.p.values, state.sw.values, state.sg.values
        p_well = np.array([p[c].mean() for c in cell_sets])
        p_feature = p_well.mean()  # averaged over producers, shared by all rows
        for w_idx, w in enumerate(producers):
            if _is_shut(schedule, w.name, times[t_idx]):
                shut[t_idx, w_idx] = True
                continue
            c = cell_sets[w_idx]
            sw_avg = sw[c].mean()
            sg_avg = sg[c].mean()
            X[t_idx, w_idx] = (kavg[w_idx], p_feature, sw_avg, sg_avg, 1.0 - sw_avg - sg_avg)
    return WellFeatures(tuple(w.name for w in producers), times, X, shut)


def rates_from_states(realization: Realization, states, wells, fluid, schedule=None) -> RateSeries:
    """Peaceman production rates per producer per report step.

    Per completion layer the phase rate uses the cell's phase mobility; gas
    production carries the solution gas dissolved in the produced oil
    (R_so * q_o) on top of free gas.  Negative computed production (crossflow)
    clamps to zero; shut-in steps are exactly zero.
    """
    from .simulator import relative_permeability  # deferred: avoids import cycle

    grid = realization.grid
    producers = [w for w in wells if w.is_producer]
    if not producers:
        raise WellError("no producers among wells")
    for w in producers:
        if not w.is_producer:
            continue
        w.validate_location(grid)
    times = np.asarray([s.time for s in states], dtype=np.float64)
    data = np.zeros((times.size, 3, len(producers)))
    r_e = equivalent_radius(grid)
    for w_idx, w in enumerate(producers):
        cells = w.cells(grid)
        k_abs = realization.perm.values[cells]
        active = grid.active[cells]
        for t_idx, state in enumerate(states):
            if _is_shut(schedule, w.name, times[t_idx]):
                continue
            p = state.p.values[cells]
            sw = state.sw.values[cells]
            sg = state.sg.values[cells]
            krw, kro, krg = relative_permeability(sw, sg, fluid)
            q_o = q_w = q_g = 0.0
            for layer in range(cells.size):
                if not active[layer]:
                    continue
                dp = p[layer] - w.control
                if dp <= 0.0:
                    continue  # crossflow suppressed
                common = dict(
                    k_abs=k_abs[layer], h=grid.dz, p_avg=p[layer], p_wf=w.control,
                    r_e=r_e, r_w=w.r_w, s=w.skin,
                )
                qo_l = C_DARCY * peaceman_rate(
                    k_r=kro[layer], mu=fluid.mu_o, B=fluid.b_o, **common)
                qw_l = C_DARCY * peaceman_rate(
                    k_r=krw[layer], mu=fluid.mu_w, B=B_WATER, **common)
                qg_l = C_DARCY * peaceman_rate(
                    k_r=krg[layer], mu=fluid.mu_g, B=fluid.b_g, **common)
                q_o += max(qo_l, 0.0)
                q_w += max(qw_l, 0.0)
                q_g += max(qg_l, 0.0) + fluid.r_so * max(qo_l, 0.0)
            data[t_idx, :, w_idx] = (q_o, q_w, q_g)
    return RateSeries(tuple(w.name for w in producers), times, data)
