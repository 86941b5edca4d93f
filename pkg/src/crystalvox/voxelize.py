"""Atoms to grids: Gaussian density fields and nearest-atom species labels.

Each voxel is sampled at its center ``(i + 1/2) * box_side / side_voxels``.
The density at a voxel is the atomic-number-weighted sum of isotropic
Gaussians over all atoms,

    1 / (sigma^3 (2 pi)^(3/2)) * sum_m Z_m exp(-|r_m - r_voxel|^2 / (2 sigma^2)),

stored unscaled; multiplying by ``sigma^3 (2 pi)^(3/2)`` recovers a field
whose peak value at an atom is its atomic number (useful for plotting only).
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .cif import Representation
from .errors import LabelOutOfRangeError, ShapeMismatchError
from .lattice import (
    PlacedAtom,
    UnitCell,
    place_repeated_lattice,
    place_single_cell,
    random_rotation,
)

NUM_SPECIES_CLASSES = 101  # background + Z in [1, 100]
SPECIES_RADIUS = 0.5  # angstrom

GRID_MAGIC = b"VXGR"
GRID_VERSION = 1
_DTYPE_F32 = 0
_DTYPE_U16 = 1


@dataclass(frozen=True)
class GridSpec:
    """Sampling-grid geometry and Gaussian parameters."""

    side_voxels: int = 30
    box_side: float = 10.0
    sigma: float = 1.0
    cutoff_sigmas: float = 6.0

    def __post_init__(self):
        if self.side_voxels < 2:
            raise ValueError("side_voxels must be >= 2")
        if self.box_side <= 0 or self.sigma <= 0:
            raise ValueError("box_side and sigma must be > 0")
        if self.cutoff_sigmas < 3:
            raise ValueError("cutoff_sigmas must be >= 3")

    @property
    def pitch(self) -> float:
        return self.box_side / self.side_voxels

    @property
    def voxel_volume(self) -> float:
        return self.pitch**3

    def centers(self) -> np.ndarray:
        """Voxel center coordinates along one axis."""
        return (np.arange(self.side_voxels) + 0.5) * self.pitch

    def center_of(self, index) -> np.ndarray:
        """Cartesian center of the voxel at an (i, j, k) index triple."""
        return (np.asarray(index, dtype=float) + 0.5) * self.pitch


@dataclass
class DensityGrid:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = self.spec.side_voxels
        if self.values.shape != (n, n, n):
            raise ShapeMismatchError(f"density grid must be {n}^3, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("density values must be finite and non-negative")

    def plot_scaled(self) -> np.ndarray:
        """Values times sigma^3 (2 pi)^(3/2): atomic number at atom locations."""
        s = self.spec.sigma
        return self.values * (s**3 * (2.0 * math.pi) ** 1.5)


@dataclass
class SpeciesGrid:
    spec: GridSpec
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        n = self.spec.side_voxels
        if self.labels.shape != (n, n, n):
            raise ShapeMismatchError(f"species grid must be {n}^3, got {self.labels.shape}")
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= NUM_SPECIES_CLASSES:
            raise LabelOutOfRangeError(
                f"species labels must lie in [0, {NUM_SPECIES_CLASSES - 1}]"
            )


def _atom_arrays(atoms: list[PlacedAtom]) -> tuple[np.ndarray, np.ndarray]:
    if not atoms:
        return np.zeros(0, dtype=int), np.zeros((0, 3))
    return (
        np.array([a.atomic_number for a in atoms], dtype=int),
        np.array([a.cart for a in atoms], dtype=float),
    )


def density_from_atoms(atoms: list[PlacedAtom], spec: GridSpec = GridSpec()) -> DensityGrid:
    """Evaluate the Gaussian density field at every voxel center.

    Per atom, only the axis-aligned window of voxels within
    ``cutoff_sigmas * sigma`` per axis is touched; everything dropped is
    bounded by ``Z * exp(-cutoff^2 / 2)`` per voxel, about 1.5e-8 Z at the
    default 6 sigma.
    """
    n = spec.side_voxels
    values = np.zeros((n, n, n))
    zs, pos = _atom_arrays(atoms)
    if len(zs) == 0:
        return DensityGrid(spec, values)

    centers = spec.centers()
    rcut = spec.cutoff_sigmas * spec.sigma
    inv_two_sigma_sq = 1.0 / (2.0 * spec.sigma**2)
    for z, p in zip(zs, pos):
        los, his, axes = [], [], []
        for d in range(3):
            lo = int(np.searchsorted(centers, p[d] - rcut, side="left"))
            hi = int(np.searchsorted(centers, p[d] + rcut, side="right"))
            if lo >= hi:
                break
            los.append(lo)
            his.append(hi)
            dx = centers[lo:hi] - p[d]
            axes.append(np.exp(-dx * dx * inv_two_sigma_sq))
        else:
            block = z * axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :]
            values[los[0]:his[0], los[1]:his[1], los[2]:his[2]] += block
    values *= 1.0 / (spec.sigma**3 * (2.0 * math.pi) ** 1.5)
    return DensityGrid(spec, values)


def density_brute_force(atoms: list[PlacedAtom], spec: GridSpec = GridSpec()) -> np.ndarray:
    """Untruncated reference: explicit distance to every voxel center.

    Independent oracle for density_from_atoms; never used in production paths.
    """
    n = spec.side_voxels
    c = spec.centers()
    grid_pts = np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1).reshape(-1, 3)
    values = np.zeros(len(grid_pts))
    zs, pos = _atom_arrays(atoms)
    for z, p in zip(zs, pos):
        d2 = np.sum((grid_pts - p) ** 2, axis=1)
        values += z * np.exp(-d2 / (2.0 * spec.sigma**2))
    values /= spec.sigma**3 * (2.0 * math.pi) ** 1.5
    return values.reshape(n, n, n)


def species_from_atoms(atoms: list[PlacedAtom], spec: GridSpec = GridSpec()) -> SpeciesGrid:
    """Label each voxel with the nearest atom's Z within 0.5 A, else 0.

    Distance ties go to the atom that appears first in the list.
    """
    n = spec.side_voxels
    labels = np.zeros((n, n, n), dtype=np.int32)
    best = np.full((n, n, n), np.inf)
    zs, pos = _atom_arrays(atoms)
    centers = spec.centers()
    r2max = SPECIES_RADIUS**2
    for z, p in zip(zs, pos):
        los, his, diffs = [], [], []
        for d in range(3):
            lo = int(np.searchsorted(centers, p[d] - SPECIES_RADIUS, side="left"))
            hi = int(np.searchsorted(centers, p[d] + SPECIES_RADIUS, side="right"))
            if lo >= hi:
                break
            los.append(lo)
            his.append(hi)
            diffs.append(centers[lo:hi] - p[d])
        else:
            d2 = (
                diffs[0][:, None, None] ** 2
                + diffs[1][None, :, None] ** 2
                + diffs[2][None, None, :] ** 2
            )
            window = (slice(los[0], his[0]), slice(los[1], his[1]), slice(los[2], his[2]))
            take = (d2 <= r2max) & (d2 < best[window])
            best[window] = np.where(take, d2, best[window])
            labels[window] = np.where(take, z, labels[window])
    return SpeciesGrid(spec, labels)


def one_hot_species(grid: SpeciesGrid, num_classes: int = NUM_SPECIES_CLASSES) -> np.ndarray:
    """One-hot class grid of shape (num_classes, n, n, n); channel 0 is background."""
    if grid.labels.max(initial=0) >= num_classes:
        raise LabelOutOfRangeError(
            f"label {int(grid.labels.max())} >= num_classes {num_classes}"
        )
    n = grid.spec.side_voxels
    out = np.zeros((num_classes, n, n, n), dtype=np.float32)
    idx = np.indices((n, n, n))
    out[grid.labels, idx[0], idx[1], idx[2]] = 1.0
    return out


def place_for_sample(
    cell: UnitCell,
    representation: Representation,
    seed: int,
    spec: GridSpec = GridSpec(),
) -> list[PlacedAtom]:
    """Seeded atom placement for one augmented sample.

    Single-cell mode rotates by a seeded uniform rotation. Repeated mode
    tiles with a seeded fractional offset (a negative seed anchors the cell
    at the box origin) and a margin of ``cutoff_sigmas * sigma`` so boundary
    density is kept.
    """
    if representation is Representation.SINGLE_CELL:
        return place_single_cell(cell, random_rotation(seed), spec.box_side)
    if seed < 0:
        offset = np.zeros(3)
    else:
        offset = np.random.default_rng(seed).random(3)
    margin = spec.cutoff_sigmas * spec.sigma
    return place_repeated_lattice(cell, offset, spec.box_side, margin)


def make_sample(
    cell: UnitCell,
    representation: Representation,
    seed: int,
    spec: GridSpec = GridSpec(),
) -> tuple[DensityGrid, SpeciesGrid]:
    """Density and species grids computed from the same placed atoms."""
    atoms = place_for_sample(cell, representation, seed, spec)
    return density_from_atoms(atoms, spec), species_from_atoms(atoms, spec)


# ---------------------------------------------------------------------------
# Binary grid files: 16-byte header (magic "VXGR", u16 version, u16 dtype,
# 3 x u16 dims, u16 reserved) followed by a little-endian z-fastest payload.
# Density grids use f32, species grids u16.
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sHHHHHH")


def atomic_write(path: str, data: bytes) -> None:
    """Write via a temp file + rename so interrupted runs never leave torn files."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_grid_file(path: str, array: np.ndarray) -> None:
    if array.ndim != 3:
        raise ShapeMismatchError("grid files hold one 3-D grid")
    if array.dtype.kind == "f":
        dtype_code, payload = _DTYPE_F32, array.astype("<f4")
    else:
        if array.min(initial=0) < 0 or array.max(initial=0) > np.iinfo(np.uint16).max:
            raise LabelOutOfRangeError("labels do not fit in u16")
        dtype_code, payload = _DTYPE_U16, array.astype("<u2")
    header = _HEADER.pack(GRID_MAGIC, GRID_VERSION, dtype_code, *array.shape, 0)
    atomic_write(path, header + payload.tobytes(order="C"))


def read_grid_file(path: str) -> np.ndarray:
    """Read a grid file; returns float32 (density) or uint16 (species) array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ShapeMismatchError(f"{path}: truncated header")
    magic, version, dtype_code, nx, ny, nz, _ = _HEADER.unpack_from(raw)
    if magic != GRID_MAGIC:
        raise ShapeMismatchError(f"{path}: bad magic {magic!r}")
    if version != GRID_VERSION:
        raise ShapeMismatchError(f"{path}: unsupported version {version}")
    dt = "<f4" if dtype_code == _DTYPE_F32 else "<u2"
    expected = nx * ny * nz * np.dtype(dt).itemsize
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise ShapeMismatchError(f"{path}: payload size {len(payload)} != {expected}")
    return np.frombuffer(payload, dtype=dt).reshape(nx, ny, nz).copy()


def write_density(path: str, grid: DensityGrid) -> None:
    write_grid_file(path, grid.values.astype(np.float32))


def write_species(path: str, grid: SpeciesGrid) -> None:
    write_grid_file(path, grid.labels.astype(np.uint16))
