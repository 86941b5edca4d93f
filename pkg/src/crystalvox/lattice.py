"""Triclinic unit-cell geometry.

Lattice matrices follow the standard crystallographic convention: row i of the
matrix is lattice vector i in angstroms, vector a lies along +x and vector b in
the x-y plane, so positions in cartesian space are ``frac @ matrix``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CellTooLargeError, DegenerateCellError

BOX_SIDE = 10.0


def lattice_matrix_from_params(
    a: float, b: float, c: float, alpha: float, beta: float, gamma: float
) -> np.ndarray:
    """Build the 3x3 lattice matrix from sides (angstrom) and angles (degrees).

    The determinant of the result equals the cell volume
    ``abc * sqrt(1 - cos^2(a) - cos^2(b) - cos^2(g) + 2 cos(a) cos(b) cos(g))``.
    Raises DegenerateCellError when the parameters admit no real cell.
    """
    for v in (a, b, c):
        if not (math.isfinite(v) and v > 0):
            raise DegenerateCellError(f"invalid side length {v}")
    for ang in (alpha, beta, gamma):
        if not (math.isfinite(ang) and 0.0 < ang < 180.0):
            raise DegenerateCellError(f"angle {ang} outside (0, 180)")

    ca, cb, cg = (math.cos(math.radians(x)) for x in (alpha, beta, gamma))
    sg = math.sin(math.radians(gamma))
    vol_factor = 1.0 - ca * ca - cb * cb - cg * cg + 2.0 * ca * cb * cg
    if vol_factor <= 0.0:
        raise DegenerateCellError(
            f"angles ({alpha}, {beta}, {gamma}) collapse the cell volume"
        )
    volume = a * b * c * math.sqrt(vol_factor)
    return np.array(
        [
            [a, 0.0, 0.0],
            [b * cg, b * sg, 0.0],
            [c * cb, c * (ca - cb * cg) / sg, volume / (a * b * sg)],
        ]
    )


@dataclass
class AtomSite:
    """One atom inside a cell, in fractional coordinates."""

    atomic_number: int
    frac: np.ndarray

    def __post_init__(self):
        if not 1 <= int(self.atomic_number) <= 118:
            raise ValueError(f"atomic number {self.atomic_number} outside [1, 118]")
        self.frac = np.asarray(self.frac, dtype=float)
        if self.frac.shape != (3,) or not np.all(np.isfinite(self.frac)):
            raise ValueError("fractional coordinates must be 3 finite reals")


@dataclass
class UnitCell:
    """Lattice matrix (rows are lattice vectors, angstrom) plus atom sites.

    Fractional coordinates are wrapped into [0, 1) on construction.
    """

    lattice_matrix: np.ndarray
    sites: list[AtomSite] = field(default_factory=list)

    def __post_init__(self):
        self.lattice_matrix = np.asarray(self.lattice_matrix, dtype=float)
        if self.lattice_matrix.shape != (3, 3):
            raise ValueError("lattice matrix must be 3x3")
        if not np.linalg.det(self.lattice_matrix) > 0:
            raise DegenerateCellError("lattice matrix must be right-handed and non-degenerate")
        for s in self.sites:
            s.frac = wrap_frac(s.frac)

    @classmethod
    def from_params(cls, a, b, c, alpha, beta, gamma, sites=()) -> "UnitCell":
        return cls(lattice_matrix_from_params(a, b, c, alpha, beta, gamma), list(sites))

    @property
    def side_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.lattice_matrix, axis=1)

    @property
    def volume(self) -> float:
        return float(np.linalg.det(self.lattice_matrix))


@dataclass
class PlacedAtom:
    """An atom in the cartesian frame of the sampling box."""

    atomic_number: int
    cart: np.ndarray

    def __post_init__(self):
        self.cart = np.asarray(self.cart, dtype=float)
        if self.cart.shape != (3,) or not np.all(np.isfinite(self.cart)):
            raise ValueError("cartesian coordinates must be 3 finite reals")


def wrap_frac(frac: np.ndarray) -> np.ndarray:
    """Wrap fractional coordinates into [0, 1)."""
    f = np.asarray(frac, dtype=float) % 1.0
    # x % 1.0 can round up to exactly 1.0 for tiny negative x
    f[f >= 1.0] -= 1.0
    return f


def frac_to_cart(cell: UnitCell, frac) -> np.ndarray:
    return np.asarray(frac, dtype=float) @ cell.lattice_matrix


def cart_to_frac(cell: UnitCell, cart) -> np.ndarray:
    return np.asarray(cart, dtype=float) @ np.linalg.inv(cell.lattice_matrix)


def random_rotation(seed: int) -> np.ndarray:
    """Draw a rotation matrix uniformly over SO(3).

    Uses the normalized-Gaussian quaternion construction, which is exactly
    uniform; the same seed always yields the same matrix.
    """
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def site_positions(cell: UnitCell) -> tuple[np.ndarray, np.ndarray]:
    """Atomic numbers and cartesian positions of a cell's sites."""
    if not cell.sites:
        return np.zeros(0, dtype=int), np.zeros((0, 3))
    z = np.array([s.atomic_number for s in cell.sites], dtype=int)
    pos = np.array([s.frac for s in cell.sites]) @ cell.lattice_matrix
    return z, pos


def place_single_cell(
    cell: UnitCell, rotation: np.ndarray, box_side: float = BOX_SIDE
) -> list[PlacedAtom]:
    """Rotate the cell's atoms about their centroid and center them in the box.

    Rotation about the centroid commutes with the centering translation, so
    rotate-then-center and center-then-rotate give the same atom set.
    """
    if float(np.max(cell.side_lengths)) >= box_side:
        raise CellTooLargeError(
            f"max cell side {np.max(cell.side_lengths):.3f} A does not fit in a "
            f"{box_side} A box"
        )
    z, pos = site_positions(cell)
    if len(z) == 0:
        return []
    centroid = pos.mean(axis=0)
    center = np.full(3, box_side / 2.0)
    moved = (rotation @ (pos - centroid).T).T + center
    return [PlacedAtom(int(zi), p) for zi, p in zip(z, moved)]


def place_repeated_lattice(
    cell: UnitCell,
    offset_frac,
    box_side: float = BOX_SIDE,
    margin: float = 0.0,
) -> list[PlacedAtom]:
    """Tile the cell periodically and keep images inside the padded box.

    An image survives when its cartesian position, after shifting the lattice
    by ``-offset_frac @ matrix``, lies in ``[-margin, box_side + margin]^3``
    (boundaries inclusive, with 1e-9 A slack so that offsets differing by an
    exact lattice translation select identical atom sets). The margin lets
    atoms just outside the box contribute their density tails.
    """
    if margin < 0:
        raise ValueError("margin must be >= 0")
    offset = np.asarray(offset_frac, dtype=float)
    mat = cell.lattice_matrix
    inv = np.linalg.inv(mat)
    lo, hi = -margin, box_side + margin
    tol = 1e-9

    corners = np.array(
        [[x, y, z] for x in (lo, hi) for y in (lo, hi) for z in (lo, hi)]
    )
    corner_fracs = corners @ inv

    placed: list[PlacedAtom] = []
    for site in cell.sites:
        base = site.frac - offset
        lo_n = np.floor(corner_fracs.min(axis=0) - base).astype(int) - 1
        hi_n = np.ceil(corner_fracs.max(axis=0) - base).astype(int) + 1
        axes = [np.arange(l, h + 1) for l, h in zip(lo_n, hi_n)]
        images = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        pos = (base + images) @ mat
        keep = np.all((pos >= lo - tol) & (pos <= hi + tol), axis=1)
        placed.extend(PlacedAtom(site.atomic_number, p) for p in pos[keep])
    return placed
