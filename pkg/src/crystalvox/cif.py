"""CIF-subset ingestion and dataset manifests.

The accepted file format covers the six ``_cell_length_*`` / ``_cell_angle_*``
keys and one ``loop_`` of atom sites with a type symbol and fractional
coordinates. Sites must already be symmetry-expanded (P1); any other symmetry
declaration is rejected rather than expanded.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .elements import atomic_number
from .errors import EmptyDatasetError, MalformedFileError, NonP1SymmetryError
from .lattice import AtomSite, UnitCell, wrap_frac

MANIFEST_VERSION = 1
DEFAULT_MAX_SIDE = 10.0

_CELL_KEYS = (
    "_cell_length_a",
    "_cell_length_b",
    "_cell_length_c",
    "_cell_angle_alpha",
    "_cell_angle_beta",
    "_cell_angle_gamma",
)

_SYMBOL_TAGS = ("_atom_site_type_symbol", "_atom_site_label")
_FRACT_TAGS = ("_atom_site_fract_x", "_atom_site_fract_y", "_atom_site_fract_z")

_IDENTITY_OPS = {"x,y,z", "+x,+y,+z", "1x,y,z"}


class Representation(str, enum.Enum):
    """The two sampling modes: one centered cell, or a periodic tiling."""

    SINGLE_CELL = "single"
    REPEATED_LATTICE = "repeated"


@dataclass
class CrystalFile:
    """Parsed crystal file: id, six cell parameters, and raw sites."""

    id: str
    cell_params: tuple[float, float, float, float, float, float]
    sites: list[tuple[str, tuple[float, float, float]]]

    @property
    def max_side(self) -> float:
        return max(self.cell_params[:3])

    def to_unit_cell(self) -> UnitCell:
        """Convert to geometry, wrapping fractional coordinates into [0, 1)."""
        sites = [
            AtomSite(atomic_number(sym), wrap_frac(np.array(coords)))
            for sym, coords in self.sites
        ]
        return UnitCell.from_params(*self.cell_params, sites=sites)


def _parse_number(token: str, context: str) -> float:
    # CIF values may carry a "(3)" uncertainty suffix
    m = re.match(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?", token)
    if not m:
        raise MalformedFileError(f"cannot parse number {token!r} in {context}")
    rest = token[m.end():]
    if rest and not re.fullmatch(r"\(\d+\)", rest):
        raise MalformedFileError(f"cannot parse number {token!r} in {context}")
    value = float(m.group(0))
    if not math.isfinite(value):
        raise MalformedFileError(f"non-finite value {token!r} in {context}")
    return value


def _element_from_label(label: str) -> str:
    m = re.match(r"^([A-Za-z]{1,2})", label)
    if not m:
        return label
    return m.group(1)


def parse_crystal_file(text: str) -> CrystalFile:
    """Parse the CIF subset into a CrystalFile.

    Raises MalformedFileError when the cell block or site loop is missing,
    UnknownElementError for unresolvable symbols, and NonP1SymmetryError when
    the file declares non-identity symmetry operations.
    """
    lines = [ln.strip() for ln in text.splitlines()]
    file_id = ""
    cell: dict[str, float] = {}
    sites: list[tuple[str, tuple[float, float, float]]] = []
    saw_site_loop = False

    i = 0
    n = len(lines)
    while i < n:
        line = lines[i]
        if not line or line.startswith("#"):
            i += 1
            continue
        if line.startswith("data_"):
            file_id = line[len("data_"):]
            i += 1
            continue
        if line.lower() == "loop_":
            tags: list[str] = []
            i += 1
            while i < n and lines[i].startswith("_"):
                tags.append(lines[i].split()[0])
                i += 1
            rows: list[list[str]] = []
            while i < n and lines[i] and not lines[i].startswith(("_", "loop_", "data_", "#")):
                rows.append(lines[i].split())
                i += 1
            if any(t.startswith(("_symmetry_equiv_pos", "_space_group_symop")) for t in tags):
                _check_symmetry_loop(tags, rows)
            elif any(t.startswith("_atom_site_") for t in tags):
                saw_site_loop = True
                sites.extend(_parse_site_loop(tags, rows))
            continue
        if line.startswith("_"):
            parts = line.split(None, 1)
            key = parts[0]
            value = parts[1].strip() if len(parts) > 1 else ""
            if key in _CELL_KEYS:
                cell[key] = _parse_number(value, key)
            elif key in ("_symmetry_space_group_name_H-M", "_space_group_name_H-M_alt"):
                name = value.strip("'\" ").replace(" ", "")
                if name not in ("P1", ""):
                    raise NonP1SymmetryError(f"space group {value!r}; only P1 files are accepted")
            elif key in ("_symmetry_Int_Tables_number", "_space_group_IT_number"):
                if value and _parse_number(value, key) != 1:
                    raise NonP1SymmetryError(f"space group number {value}; only P1 is accepted")
            i += 1
            continue
        i += 1

    missing = [k for k in _CELL_KEYS if k not in cell]
    if missing:
        raise MalformedFileError(f"missing cell parameters: {', '.join(missing)}")
    if not saw_site_loop:
        raise MalformedFileError("missing atom-site loop")

    params = tuple(cell[k] for k in _CELL_KEYS)
    for sym, _ in sites:
        atomic_number(sym)  # raises UnknownElementError early
    return CrystalFile(id=file_id, cell_params=params, sites=sites)


def _check_symmetry_loop(tags, rows):
    col = next(
        i for i, t in enumerate(tags)
        if t.startswith(("_symmetry_equiv_pos_as_xyz", "_space_group_symop_operation_xyz"))
    )
    for row in rows:
        op = "".join(row[col:]).strip("'\" ").replace(" ", "").lower()
        if op not in _IDENTITY_OPS:
            raise NonP1SymmetryError(f"non-identity symmetry operation {op!r}")


def _parse_site_loop(tags, rows):
    sym_col = next((tags.index(t) for t in _SYMBOL_TAGS if t in tags), None)
    if sym_col is None:
        raise MalformedFileError("atom-site loop lacks a symbol column")
    try:
        frac_cols = [tags.index(t) for t in _FRACT_TAGS]
    except ValueError:
        raise MalformedFileError("atom-site loop lacks fractional coordinates") from None
    sites = []
    for row in rows:
        if len(row) < len(tags):
            raise MalformedFileError(f"short atom-site row: {' '.join(row)!r}")
        symbol = _element_from_label(row[sym_col])
        coords = tuple(_parse_number(row[c], "atom site") for c in frac_cols)
        sites.append((symbol, coords))
    return sites


def write_crystal_file(cf: CrystalFile) -> str:
    """Serialize a CrystalFile back to the CIF subset (identity under parse)."""
    a, b, c, al, be, ga = cf.cell_params
    out = [f"data_{cf.id}"]
    for key, val in zip(_CELL_KEYS, (a, b, c, al, be, ga)):
        out.append(f"{key} {val!r}")
    out.append("loop_")
    out.append("_atom_site_type_symbol")
    out.extend(_FRACT_TAGS)
    for sym, (x, y, z) in cf.sites:
        out.append(f"{sym} {x!r} {y!r} {z!r}")
    out.append("")
    return "\n".join(out)


def filter_by_size(files: list[CrystalFile], max_side_angstrom: float) -> list[CrystalFile]:
    """Keep the files whose longest cell side is strictly below the cutoff."""
    if max_side_angstrom <= 0:
        raise ValueError("max_side_angstrom must be > 0")
    return [f for f in files if f.max_side < max_side_angstrom]


@dataclass
class ManifestEntry:
    path: str
    split: str  # "train" | "test"
    seeds: list[int]


@dataclass
class DatasetManifest:
    """Train/test split plus augmentation seeds for every retained file.

    For the repeated-lattice representation the first seed of each entry is
    the sentinel -1, selecting the crop whose unit cell is anchored at the
    box origin; non-negative seeds draw a random fractional offset.
    """

    entries: list[ManifestEntry]
    representation: Representation = Representation.SINGLE_CELL
    rotations_per_cell: int = 3
    offsets_per_cell: int = 2
    train_fraction: float = 0.8
    seed: int = 0
    version: int = MANIFEST_VERSION

    def paths(self, split: str | None = None) -> list[str]:
        return [e.path for e in self.entries if split is None or e.split == split]

    def to_json(self) -> str:
        doc = {
            "version": self.version,
            "representation": self.representation.value,
            "train_fraction": self.train_fraction,
            "seed": self.seed,
            "rotations_per_cell": self.rotations_per_cell,
            "offsets_per_cell": self.offsets_per_cell,
            "entries": [
                {"path": e.path, "split": e.split, "seeds": e.seeds}
                for e in self.entries
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        doc = json.loads(text)
        return cls(
            entries=[
                ManifestEntry(e["path"], e["split"], list(e["seeds"]))
                for e in doc["entries"]
            ],
            representation=Representation(doc["representation"]),
            rotations_per_cell=doc["rotations_per_cell"],
            offsets_per_cell=doc["offsets_per_cell"],
            train_fraction=doc["train_fraction"],
            seed=doc["seed"],
            version=doc["version"],
        )


def build_manifest(
    files: list[CrystalFile],
    train_fraction: float = 0.8,
    seed: int = 0,
    representation: Representation = Representation.SINGLE_CELL,
    rotations_per_cell: int = 3,
    offsets_per_cell: int = 2,
    paths: list[str] | None = None,
    max_side: float = DEFAULT_MAX_SIDE,
) -> DatasetManifest:
    """Filter oversized cells, split deterministically, and assign seeds.

    The same seed always produces a byte-identical manifest. Entries keep the
    input order; only the train/test assignment is randomized.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    if rotations_per_cell < 1:
        raise ValueError("rotations_per_cell must be >= 1")
    if paths is None:
        paths = [f"{f.id or i}.cif" for i, f in enumerate(files)]
    if len(paths) != len(files):
        raise ValueError("paths must parallel files")

    kept = [(p, f) for p, f in zip(paths, files) if f.max_side < max_side]
    if not kept:
        raise EmptyDatasetError("no files within the size cutoff")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(kept))
    n_train = int(round(train_fraction * len(kept)))
    n_train = min(max(n_train, 1), len(kept) - 1) if len(kept) > 1 else len(kept)
    train_idx = set(order[:n_train].tolist())

    entries = []
    for i, (path, _f) in enumerate(kept):
        if representation is Representation.SINGLE_CELL:
            seeds = _unique_seeds(rng, rotations_per_cell)
        else:
            seeds = [-1] + _unique_seeds(rng, offsets_per_cell)
        entries.append(
            ManifestEntry(path=path, split="train" if i in train_idx else "test", seeds=seeds)
        )
    return DatasetManifest(
        entries=entries,
        representation=representation,
        rotations_per_cell=rotations_per_cell,
        offsets_per_cell=offsets_per_cell,
        train_fraction=train_fraction,
        seed=seed,
    )


def _unique_seeds(rng: np.random.Generator, count: int) -> list[int]:
    seeds: list[int] = []
    while len(seeds) < count:
        s = int(rng.integers(0, 2**31 - 1))
        if s not in seeds:
            seeds.append(s)
    return seeds
