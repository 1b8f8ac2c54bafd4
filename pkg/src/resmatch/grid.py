"""Structured Cartesian grid, scalar fields, Gaussian random-field priors, and field I/O.

File formats
------------
Field file: one UTF-8 JSON header line ``{"nx":..,"ny":..,"nz":..,"name":..}``
terminated by ``\\n``, followed by ``nx*ny*nz`` little-endian IEEE-754 float64
values in x-fastest linear order (index = i + nx*j + nx*ny*k).

Ensemble file: a JSON manifest listing, per member, the permeability and
porosity field file paths plus the fault-multiplier map.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Grid",
    "ScalarField",
    "Realization",
    "GrfSpec",
    "FaultSet",
    "make_grid",
    "sample_gaussian_field",
    "generate_prior_ensemble",
    "read_field",
    "write_field",
    "write_ensemble",
    "read_ensemble",
]

PORO_CLAMP = (0.05, 0.45)


class GridError(ValueError):
    pass


class FieldIOError(IOError):
    pass


@dataclass(frozen=True)
class Grid:
    """Cartesian cell-centered grid with an active-cell mask.

    Linear cell index is x-fastest: ``i + nx*j + nx*ny*k``.
    """

    nx: int
    ny: int
    nz: int
    dx: float
    dy: float
    dz: float
    active: np.ndarray  # bool, flat, length nx*ny*nz

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy * self.dz

    def cell_index(self, i: int, j: int, k: int) -> int:
        if not (0 <= i < self.nx and 0 <= j < self.ny and 0 <= k < self.nz):
            raise GridError(f"cell ({i},{j},{k}) outside grid {self.nx}x{self.ny}x{self.nz}")
        return i + self.nx * j + self.nx * self.ny * k

    def cell_coords(self) -> np.ndarray:
        """Cell-center coordinates, shape (n_cells, 3), in length units."""
        i = np.arange(self.nx)
        j = np.arange(self.ny)
        k = np.arange(self.nz)
        ii, jj, kk = np.meshgrid(i, j, k, indexing="ij")
        # flatten x-fastest: transpose so index runs i fastest, then j, then k
        order = np.argsort(ii.ravel() + self.nx * jj.ravel() + self.nx * self.ny * kk.ravel())
        xs = (ii.ravel()[order] + 0.5) * self.dx
        ys = (jj.ravel()[order] + 0.5) * self.dy
        zs = (kk.ravel()[order] + 0.5) * self.dz
        return np.column_stack([xs, ys, zs])

    def _key(self):
        return (self.nx, self.ny, self.nz, self.dx, self.dy, self.dz, self.active.tobytes())


@dataclass
class ScalarField:
    """One real value per grid cell; values at inactive cells are ignored."""

    grid: Grid
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.grid.n_cells,):
            raise GridError(
                f"field '{self.name}': {self.values.size} values for "
                f"{self.grid.n_cells}-cell grid"
            )

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy(), self.name)


@dataclass
class Realization:
    """One uncertain-parameter sample: permeability, porosity, fault multipliers."""

    perm: ScalarField
    poro: ScalarField
    ftm: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.perm.grid


@dataclass(frozen=True)
class GrfSpec:
    """Stationary Gaussian random field with per-axis exponential covariance.

    ``C(h) = variance * exp(-sum_a |h_a| / correlation_lengths[a])``; the
    optional log-normal transform exponentiates the Gaussian draw.  ``mean``
    and ``variance`` refer to the underlying Gaussian field.
    """

    mean: float
    variance: float
    correlation_lengths: tuple
    transform: str = "none"  # "none" | "log-normal"

    def __post_init__(self):
        if self.variance <= 0:
            raise GridError("GrfSpec.variance must be > 0")
        if len(self.correlation_lengths) != 3 or any(l <= 0 for l in self.correlation_lengths):
            raise GridError("GrfSpec.correlation_lengths must be 3 positive reals")
        if self.transform not in ("none", "log-normal"):
            raise GridError(f"unknown transform {self.transform!r}")


@dataclass(frozen=True)
class FaultSet:
    """Axis-aligned set of cell faces sharing one transmissibility multiplier.

    The set contains every face between layer ``plane`` and ``plane + 1``
    along ``axis``, restricted to the (inclusive) index ranges on the two
    transverse axes.  Ranges of None span the whole grid.
    """

    name: str
    axis: str  # "x" | "y" | "z"
    plane: int
    range_a: tuple | None = None  # first transverse axis (y for x-faults)
    range_b: tuple | None = None

    def lower_cells(self, grid: Grid) -> np.ndarray:
        """Linear indices of the lower cell of each face in the set."""
        ax = "xyz".index(self.axis)
        dims = (grid.nx, grid.ny, grid.nz)
        if not 0 <= self.plane < dims[ax] - 1:
            raise GridError(f"fault {self.name!r}: plane {self.plane} outside axis {self.axis}")
        tv = [a for a in range(3) if a != ax]
        ra = self.range_a or (0, dims[tv[0]] - 1)
        rb = self.range_b or (0, dims[tv[1]] - 1)
        aa, bb = np.meshgrid(
            np.arange(ra[0], ra[1] + 1), np.arange(rb[0], rb[1] + 1), indexing="ij"
        )
        idx = {ax: np.full(aa.size, self.plane), tv[0]: aa.ravel(), tv[1]: bb.ravel()}
        return idx[0] + grid.nx * idx[1] + grid.nx * grid.ny * idx[2]


def make_grid(nx, ny, nz, dx, dy, dz, active) -> Grid:
    """Validate and build a grid; ``active`` is a flat mask of length nx*ny*nz."""
    if min(nx, ny, nz) < 1:
        raise GridError("cell counts must be >= 1")
    if min(dx, dy, dz) <= 0:
        raise GridError("cell sizes must be > 0")
    active = np.asarray(active, dtype=bool).ravel()
    if active.size != nx * ny * nz:
        raise GridError(f"active mask has {active.size} entries, expected {nx * ny * nz}")
    active.setflags(write=False)
    return Grid(int(nx), int(ny), int(nz), float(dx), float(dy), float(dz), active)


# ---------------------------------------------------------------------------
# Gaussian random fields
# ---------------------------------------------------------------------------

_CHOL_CACHE: dict = {}


def _covariance_cholesky(grid: Grid, spec: GrfSpec) -> np.ndarray:
    """Dense Cholesky factor of the field covariance, cached per (grid, spec).

    Dense factorization is adequate at desk scale; guard against grids where
    the n^2 covariance would not fit comfortably in memory.
    """
    key = (grid._key(), spec.variance, spec.correlation_lengths)
    got = _CHOL_CACHE.get(key)
    if got is not None:
        return got
    n = grid.n_cells
    if n > 64**3:
        raise GridError(f"dense covariance sampling limited to 64^3 cells, got {n}")
    coords = grid.cell_coords()
    lx, ly, lz = spec.correlation_lengths
    # separable exponential: exp(-|hx|/lx - |hy|/ly - |hz|/lz)
    log_c = np.zeros((n, n))
    for a, la in enumerate((lx, ly, lz)):
        log_c -= np.abs(coords[:, a][:, None] - coords[:, a][None, :]) / la
    cov = spec.variance * np.exp(log_c)
    cov[np.diag_indices_from(cov)] += 1e-10 * spec.variance
    factor = np.linalg.cholesky(cov)
    if len(_CHOL_CACHE) >= 8:
        _CHOL_CACHE.pop(next(iter(_CHOL_CACHE)))
    _CHOL_CACHE[key] = factor
    return factor


def sample_gaussian_field(grid: Grid, spec: GrfSpec, seed) -> ScalarField:
    """Draw one realization of the random field; deterministic given ``seed``."""
    factor = _covariance_cholesky(grid, spec)
    rng = np.random.default_rng(seed)
    values = spec.mean + factor @ rng.standard_normal(grid.n_cells)
    if spec.transform == "log-normal":
        values = np.exp(values)
    return ScalarField(grid, values)


def generate_prior_ensemble(
    grid: Grid,
    perm_spec: GrfSpec,
    poro_spec: GrfSpec,
    ftm_spec: dict,
    J: int,
    seed: int,
    poro_clamp=PORO_CLAMP,
) -> list:
    """Draw J independent realizations; member j depends only on (seed, j).

    ``ftm_spec`` maps fault-set name to a (lo, hi) uniform range.  Porosity is
    clamped to ``poro_clamp`` so the simulator stays well posed.
    """
    if J < 2:
        raise GridError(f"ensemble size must be >= 2, got {J}")
    return [sample_realization(grid, perm_spec, poro_spec, ftm_spec, (seed, j), poro_clamp)
            for j in range(J)]


def sample_realization(
    grid: Grid,
    perm_spec: GrfSpec,
    poro_spec: GrfSpec,
    ftm_spec: dict,
    seed,
    poro_clamp=PORO_CLAMP,
) -> Realization:
    """One realization from the prior; substreams keep perm/poro/ftm independent."""
    base = np.random.SeedSequence(seed)
    s_perm, s_poro, s_ftm = base.spawn(3)
    perm = sample_gaussian_field(grid, perm_spec, s_perm)
    perm.name = "perm"
    poro = sample_gaussian_field(grid, poro_spec, s_poro)
    np.clip(poro.values, poro_clamp[0], poro_clamp[1], out=poro.values)
    poro.name = "poro"
    rng = np.random.default_rng(s_ftm)
    ftm = {}
    for name in sorted(ftm_spec):
        lo, hi = ftm_spec[name]
        if lo < 0 or hi < lo:
            raise GridError(f"ftm range for {name!r} must satisfy 0 <= lo <= hi")
        ftm[name] = float(rng.uniform(lo, hi))
    return Realization(perm, poro, ftm)


# ---------------------------------------------------------------------------
# Field and ensemble I/O
# ---------------------------------------------------------------------------


def write_field(field_: ScalarField, path) -> None:
    header = {
        "nx": field_.grid.nx,
        "ny": field_.grid.ny,
        "nz": field_.grid.nz,
        "name": field_.name,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(field_.values, dtype="<f8").tobytes())


def read_field(path, grid: Grid | None = None) -> ScalarField:
    """Read a field file; attaches ``grid`` if given (dims must match), else a
    unit-spacing all-active grid with the header's dimensions."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
            nx, ny, nz = int(header["nx"]), int(header["ny"]), int(header["nz"])
        except (ValueError, KeyError) as exc:
            raise FieldIOError(f"{path}: malformed field header") from exc
        n = nx * ny * nz
        payload = fh.read()
    if len(payload) < 8 * n:
        raise FieldIOError(f"{path}: truncated payload ({len(payload)} bytes for {n} values)")
    if len(payload) > 8 * n:
        raise FieldIOError(f"{path}: payload longer than header dims imply")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if grid is None:
        grid = make_grid(nx, ny, nz, 1.0, 1.0, 1.0, np.ones(n, dtype=bool))
    elif (grid.nx, grid.ny, grid.nz) != (nx, ny, nz):
        raise FieldIOError(
            f"{path}: header dims ({nx},{ny},{nz}) do not match grid "
            f"({grid.nx},{grid.ny},{grid.nz})"
        )
    return ScalarField(grid, values, header.get("name", ""))


def write_ensemble(members: list, directory, grid: Grid, prefix="member") -> str:
    """Write member fields plus a JSON manifest; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    records = []
    for j, real in enumerate(members):
        perm_path = f"{prefix}_{j:04d}.perm.field"
        poro_path = f"{prefix}_{j:04d}.poro.field"
        write_field(real.perm, os.path.join(directory, perm_path))
        write_field(real.poro, os.path.join(directory, poro_path))
        records.append({"perm": perm_path, "poro": poro_path, "ftm": real.ftm})
    manifest = {
        "grid": {
            "nx": grid.nx, "ny": grid.ny, "nz": grid.nz,
            "dx": grid.dx, "dy": grid.dy, "dz": grid.dz,
            "inactive": np.flatnonzero(~grid.active).tolist(),
        },
        "members": records,
    }
    manifest_path = os.path.join(directory, "ensemble.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest_path


def read_ensemble(manifest_path) -> tuple:
    """Read an ensemble manifest; returns (grid, list of Realization)."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    g = manifest["grid"]
    n = g["nx"] * g["ny"] * g["nz"]
    active = np.ones(n, dtype=bool)
    active[np.asarray(g.get("inactive", []), dtype=int)] = False
    grid = make_grid(g["nx"], g["ny"], g["nz"], g["dx"], g["dy"], g["dz"], active)
    base = os.path.dirname(manifest_path)
    members = []
    for rec in manifest["members"]:
        perm = read_field(os.path.join(base, rec["perm"]), grid)
        poro = read_field(os.path.join(base, rec["poro"]), grid)
        members.append(Realization(perm, poro, {k: float(v) for k, v in rec["ftm"].items()}))
    return grid, members
