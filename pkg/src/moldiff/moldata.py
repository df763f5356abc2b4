"""Molecule records: typed topology/geometry pairs and their text format.

A topology is a graph with nine categorical features per atom and three per
bond; a geometry is the matching atom-type vector plus float64 coordinates.
Atom feature columns, in storage order:

====  ==============  =========
col   feature         range
====  ==============  =========
0     atom type       0..118
1     chirality tag   0..3
2     degree          0..10
3     formal charge   -5..5
4     hydrogen count  0..8
5     radical count   0..4
6     hybridization   0..4
7     is aromatic     0..1
8     is in ring      0..1
====  ==============  =========

Bond columns: type 0..3 (single, double, triple, aromatic), stereo 0..5,
conjugated 0..1.  Each feature also owns a mask token one past its upper
bound (so +6 for formal charge); masking replaces whole atoms' feature rows,
never bond features and never coordinates.

Text format, one molecule per line (blank lines and ``#`` comments are
skipped in corpus files)::

    atoms=<atom>;<atom>;... bonds=<bond>;...|- coords=<xyz>;<xyz>;...

where ``<atom>`` is the nine comma-separated column values, ``<bond>`` is
``i,j,type,stereo,conjugated`` with i < j, ``-`` stands for an empty bond
list, and ``<xyz>`` is three floats printed with shortest round-trip
precision.  Parsing a serialized record reproduces it value-exactly, and
re-serializing reproduces the bytes.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "ATOM_RANGES",
    "BOND_RANGES",
    "MaskSpec",
    "Molecule2D",
    "Molecule3D",
    "MoleculePair",
    "ValidationError",
    "apply_mask",
    "apply_mask_3d",
    "atom_mask_tokens",
    "decode_topology",
    "derived_atom_columns",
    "masked_indices",
    "mirror_upper",
    "one_hot_atoms",
    "one_hot_width",
    "parse_molecule",
    "read_corpus",
    "serialize_molecule",
    "to_dense_edge_tensor",
    "write_corpus",
]

ATOM_COLUMNS = (
    "atom_type",
    "chirality",
    "degree",
    "formal_charge",
    "num_h",
    "radicals",
    "hybridization",
    "is_aromatic",
    "is_in_ring",
)
# (low, high) inclusive per atom column
ATOM_RANGES = ((0, 118), (0, 3), (0, 10), (-5, 5), (0, 8), (0, 4), (0, 4), (0, 1), (0, 1))
BOND_COLUMNS = ("type", "stereo", "conjugated")
BOND_RANGES = ((0, 3), (0, 5), (0, 1))

# atom columns that carry independent information; the rest (degree,
# aromatic flag, ring flag) are recomputed from the bond graph on decode
GENERATIVE_COLUMNS = (0, 1, 3, 4, 5, 6)

EDGE_CHANNELS = 5  # no-bond + four bond types


class ValidationError(ValueError):
    """A molecule record violating the format or a feature range."""


def atom_mask_tokens() -> np.ndarray:
    """Mask token per atom column: one past the column's upper bound."""
    return np.array([hi + 1 for _, hi in ATOM_RANGES], dtype=np.int64)


@dataclass(eq=False)
class Molecule2D:
    """Topology: per-atom feature rows plus an undirected typed bond list.

    ``atoms`` is (n, 9) int64, ``bonds`` is (m, 5) int64 with columns
    (i, j, type, stereo, conjugated), i < j, no duplicates.
    """

    atoms: np.ndarray
    bonds: np.ndarray

    def __post_init__(self):
        _check_topology_structure(self)

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Molecule2D)
            and np.array_equal(self.atoms, other.atoms)
            and np.array_equal(self.bonds, other.bonds)
        )


@dataclass(eq=False)
class Molecule3D:
    """Geometry: atom types plus float64 coordinates in angstroms."""

    atom_types: np.ndarray
    coords: np.ndarray

    def __post_init__(self):
        if self.atom_types.ndim != 1:
            raise ValidationError(
                f"atom_types must be one-dimensional, got {self.atom_types.shape}"
            )
        n = self.atom_types.shape[0]
        if self.coords.shape != (n, 3):
            raise ValidationError(
                f"coords must be ({n}, 3), got {self.coords.shape}"
            )
        if not np.all(np.isfinite(self.coords)):
            raise ValidationError("coords contain non-finite values")

    @property
    def n_atoms(self) -> int:
        return self.atom_types.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Molecule3D)
            and np.array_equal(self.atom_types, other.atom_types)
            and np.array_equal(self.coords, other.coords)
        )


@dataclass(eq=False)
class MoleculePair:
    """A topology and a geometry of the same molecule, atom-aligned."""

    topo: Molecule2D
    geom: Molecule3D

    def __post_init__(self):
        n = self.topo.n_atoms
        if self.geom.n_atoms != n:
            raise ValidationError(
                f"geometry atom count {self.geom.n_atoms} != topology {n}"
            )
        if not np.array_equal(self.geom.atom_types, self.topo.atoms[:, 0]):
            raise ValidationError("geometry atom types disagree with topology")

    @property
    def n_atoms(self) -> int:
        return self.topo.n_atoms

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, MoleculePair)
            and self.topo == other.topo
            and self.geom == other.geom
        )


@dataclass(frozen=True)
class MaskSpec:
    """Masking policy: fraction of atoms to mask and the selection seed."""

    ratio: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"mask ratio must lie in [0, 1], got {self.ratio}")


# ---------------------------------------------------------------------------
# validation


def _check_topology_structure(mol: Molecule2D) -> None:
    """Constructor-time checks: shapes, bond structure, and feature values
    at most one past their range (the in-memory mask token).  Strict range
    checks without the mask allowance happen at the file boundary."""
    atoms, bonds = mol.atoms, mol.bonds
    if atoms.ndim != 2 or atoms.shape[1] != len(ATOM_RANGES):
        raise ValidationError(f"atoms must be (n, 9), got {atoms.shape}")
    if atoms.shape[0] == 0:
        raise ValidationError("molecule has no atoms")
    if not np.issubdtype(atoms.dtype, np.integer):
        raise ValidationError(f"atoms must be integers, got {atoms.dtype}")
    for col, (lo, hi) in enumerate(ATOM_RANGES):
        vals = atoms[:, col]
        bad = np.nonzero((vals < lo) | (vals > hi + 1))[0]
        if bad.size:
            raise ValidationError(
                f"atom {bad[0]}: {ATOM_COLUMNS[col]}={vals[bad[0]]} "
                f"outside [{lo}, {hi + 1}]"
            )
    _check_bond_rows(bonds, atoms.shape[0], "")


def _check_bond_rows(bonds: np.ndarray, n: int, where: str) -> None:
    if bonds.ndim != 2 or bonds.shape[1] != 5:
        raise ValidationError(f"{where}bonds must be (m, 5), got {bonds.shape}")
    if not np.issubdtype(bonds.dtype, np.integer):
        raise ValidationError(f"{where}bonds must be integers, got {bonds.dtype}")
    seen = set()
    for row in range(bonds.shape[0]):
        i, j = int(bonds[row, 0]), int(bonds[row, 1])
        if not (0 <= i < n and 0 <= j < n):
            raise ValidationError(
                f"{where}bond {row}: endpoint ({i}, {j}) outside 0..{n - 1}"
            )
        if i >= j:
            raise ValidationError(f"{where}bond {row}: endpoints must satisfy i < j")
        if (i, j) in seen:
            raise ValidationError(f"{where}bond {row}: duplicate bond ({i}, {j})")
        seen.add((i, j))
        for col, (lo, hi) in enumerate(BOND_RANGES):
            v = int(bonds[row, col + 2])
            if not lo <= v <= hi:
                raise ValidationError(
                    f"{where}bond {row}: {BOND_COLUMNS[col]}={v} outside [{lo}, {hi}]"
                )


def _validate_topology(mol: Molecule2D, where: str = "") -> None:
    """Strict record validation: every feature inside its table range, so a
    mask token never reaches a file."""
    atoms, bonds = mol.atoms, mol.bonds
    if atoms.ndim != 2 or atoms.shape[1] != len(ATOM_RANGES):
        raise ValidationError(f"{where}atoms must be (n, 9), got {atoms.shape}")
    n = atoms.shape[0]
    if n == 0:
        raise ValidationError(f"{where}molecule has no atoms")
    for col, (lo, hi) in enumerate(ATOM_RANGES):
        vals = atoms[:, col]
        bad = np.nonzero((vals < lo) | (vals > hi))[0]
        if bad.size:
            raise ValidationError(
                f"{where}atom {bad[0]}: {ATOM_COLUMNS[col]}={vals[bad[0]]} "
                f"outside [{lo}, {hi}]"
            )
    _check_bond_rows(bonds, n, where)


def _validate_pair(pair: MoleculePair, where: str = "") -> None:
    _validate_topology(pair.topo, where)
    geom = pair.geom
    n = pair.topo.n_atoms
    if geom.atom_types.shape != (n,):
        raise ValidationError(
            f"{where}geometry atom count "
            f"{geom.atom_types.shape[0] if geom.atom_types.ndim == 1 else '?'} "
            f"!= topology {n}"
        )
    if geom.coords.shape != (n, 3):
        raise ValidationError(f"{where}coords must be ({n}, 3), got {geom.coords.shape}")
    if not np.array_equal(geom.atom_types, pair.topo.atoms[:, 0]):
        raise ValidationError(f"{where}geometry atom types disagree with topology")
    if not np.all(np.isfinite(geom.coords)):
        raise ValidationError(f"{where}coords contain non-finite values")


# ---------------------------------------------------------------------------
# text format


def serialize_molecule(pair: MoleculePair) -> str:
    """One-line record for a molecule pair; inverse of :func:`parse_molecule`.

    Validates first: an invalid pair (including one mutated after
    construction, or one carrying in-memory mask tokens) is never written.
    """
    _validate_pair(pair)
    atoms = ";".join(
        ",".join(str(int(v)) for v in row) for row in pair.topo.atoms
    )
    if pair.topo.bonds.shape[0] == 0:
        bonds = "-"
    else:
        bonds = ";".join(
            ",".join(str(int(v)) for v in row) for row in pair.topo.bonds
        )
    coords = ";".join(
        ",".join(repr(float(v)) for v in row) for row in pair.geom.coords
    )
    return f"atoms={atoms} bonds={bonds} coords={coords}"


def parse_molecule(text: str, where: str = "") -> MoleculePair:
    """Parse one record; raises :class:`ValidationError` with context on any
    malformed field or out-of-range feature."""
    fields: dict[str, str] = {}
    for token in text.strip().split(" "):
        if not token:
            continue
        if "=" not in token:
            raise ValidationError(f"{where}malformed token {token!r}")
        key, _, val = token.partition("=")
        if key in fields:
            raise ValidationError(f"{where}duplicate field {key!r}")
        fields[key] = val
    missing = {"atoms", "bonds", "coords"} - set(fields)
    if missing:
        raise ValidationError(f"{where}missing fields: {', '.join(sorted(missing))}")
    extra = set(fields) - {"atoms", "bonds", "coords"}
    if extra:
        raise ValidationError(f"{where}unknown fields: {', '.join(sorted(extra))}")

    def ints(chunk: str, width: int, what: str) -> np.ndarray:
        rows = []
        for part in chunk.split(";"):
            cells = part.split(",")
            if len(cells) != width:
                raise ValidationError(
                    f"{where}{what} entry {part!r} has {len(cells)} values, expected {width}"
                )
            try:
                rows.append([int(c) for c in cells])
            except ValueError as exc:
                raise ValidationError(f"{where}{what} entry {part!r}: {exc}") from exc
        return np.array(rows, dtype=np.int64)

    atoms = ints(fields["atoms"], 9, "atom")
    if fields["bonds"] == "-":
        bonds = np.zeros((0, 5), dtype=np.int64)
    else:
        bonds = ints(fields["bonds"], 5, "bond")
    rows = []
    for part in fields["coords"].split(";"):
        cells = part.split(",")
        if len(cells) != 3:
            raise ValidationError(
                f"{where}coordinate entry {part!r} has {len(cells)} values, expected 3"
            )
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise ValidationError(f"{where}coordinate entry {part!r}: {exc}") from exc
    coords = np.array(rows, dtype=np.float64).reshape(-1, 3)
    pair = MoleculePair(
        Molecule2D(atoms, bonds), Molecule3D(atoms[:, 0].copy(), coords)
    )
    _validate_pair(pair, where)
    return pair


def read_corpus(path) -> list[MoleculePair]:
    """Parse every record in a corpus file; errors carry the line number."""
    pairs: list[MoleculePair] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            pairs.append(parse_molecule(stripped, where=f"{path}:{lineno}: "))
    return pairs


def write_corpus(path, pairs: list[MoleculePair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(serialize_molecule(pair) + "\n")


# ---------------------------------------------------------------------------
# masking


def masked_indices(n_atoms: int, spec: MaskSpec) -> np.ndarray:
    """Atom indices selected for masking: exactly round(ratio * n) of them
    (half rounds up), drawn uniformly without replacement from the spec seed,
    returned sorted."""
    if not 0.0 <= spec.ratio <= 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1], got {spec.ratio}")
    k = int(np.floor(spec.ratio * n_atoms + 0.5))
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    rng = np.random.default_rng(spec.seed)
    return np.sort(rng.choice(n_atoms, size=k, replace=False)).astype(np.int64)


def apply_mask(topo: Molecule2D, spec: MaskSpec) -> Molecule2D:
    """Copy of the topology with the selected atoms' feature rows replaced by
    the per-column mask tokens.  Bond features are never masked."""
    idx = masked_indices(topo.n_atoms, spec)
    atoms = topo.atoms.copy()
    atoms[idx] = atom_mask_tokens()
    return Molecule2D(atoms, topo.bonds.copy())


def apply_mask_3d(geom: Molecule3D, spec: MaskSpec) -> Molecule3D:
    """Copy of the geometry with the selected atoms' types replaced by the
    atom-type mask token.  Coordinates are never masked."""
    idx = masked_indices(geom.n_atoms, spec)
    types = geom.atom_types.copy()
    types[idx] = atom_mask_tokens()[0]
    return Molecule3D(types, geom.coords.copy())


# ---------------------------------------------------------------------------
# dense encodings for the topology diffusion


def one_hot_width() -> int:
    return sum(ATOM_RANGES[c][1] - ATOM_RANGES[c][0] + 1 for c in GENERATIVE_COLUMNS)


def one_hot_atoms(topo: Molecule2D) -> np.ndarray:
    """Concatenated one-hot rows of the generative atom columns.

    Derived columns (degree, aromatic flag, ring flag) are excluded; they are
    reconstructed from the bond graph when a sampled topology is decoded.
    """
    n = topo.n_atoms
    out = np.zeros((n, one_hot_width()), dtype=np.float64)
    offset = 0
    for col in GENERATIVE_COLUMNS:
        lo, hi = ATOM_RANGES[col]
        width = hi - lo + 1
        vals = topo.atoms[:, col] - lo
        if np.any((vals < 0) | (vals >= width)):
            raise ValidationError(
                f"column {ATOM_COLUMNS[col]} contains values outside its range"
            )
        out[np.arange(n), offset + vals] = 1.0
        offset += width
    return out


def to_dense_edge_tensor(topo: Molecule2D) -> np.ndarray:
    """Symmetric (n, n, 5) one-hot bond tensor.

    Channel 0 is the no-bond channel (also used on the diagonal); channels
    1..4 are the four bond types.  Every (i, j) row sums to one, and the
    tensor is symmetric in its first two axes.
    """
    n = topo.n_atoms
    out = np.zeros((n, n, EDGE_CHANNELS), dtype=np.float64)
    out[:, :, 0] = 1.0
    for row in topo.bonds:
        i, j, btype = int(row[0]), int(row[1]), int(row[2])
        out[i, j, 0] = out[j, i, 0] = 0.0
        out[i, j, btype + 1] = out[j, i, btype + 1] = 1.0
    return out


def mirror_upper(z: np.ndarray) -> np.ndarray:
    """Symmetrize an (n, n, ...) pair array by copying the upper triangle
    onto the lower one, so each unordered pair carries a single value."""
    out = np.array(z, dtype=np.float64)
    iu, ju = np.triu_indices(out.shape[0], k=1)
    out[ju, iu] = out[iu, ju]
    return out


def derived_atom_columns(
    n_atoms: int, bonds: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(degree, is_aromatic, is_in_ring) recomputed from the bond list.

    An atom is aromatic when an incident bond has the aromatic type; it is
    in a ring when some incident bond lies on a cycle (is not a bridge).
    """
    degree = np.zeros(n_atoms, dtype=np.int64)
    aromatic = np.zeros(n_atoms, dtype=np.int64)
    for row in bonds:
        i, j = int(row[0]), int(row[1])
        degree[i] += 1
        degree[j] += 1
        if int(row[2]) == 3:
            aromatic[i] = aromatic[j] = 1
    in_ring = _cycle_membership(n_atoms, bonds)
    return degree, aromatic, in_ring


def _cycle_membership(n_atoms: int, bonds: np.ndarray) -> np.ndarray:
    """Atoms incident to at least one non-bridge edge, via iterative DFS."""
    m = bonds.shape[0]
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n_atoms)]
    for e in range(m):
        i, j = int(bonds[e, 0]), int(bonds[e, 1])
        adj[i].append((j, e))
        adj[j].append((i, e))
    index = np.full(n_atoms, -1, dtype=np.int64)
    low = np.zeros(n_atoms, dtype=np.int64)
    is_bridge = np.zeros(m, dtype=bool)
    counter = 0
    for root in range(n_atoms):
        if index[root] >= 0:
            continue
        stack: list[tuple[int, int, int]] = [(root, -1, 0)]
        while stack:
            node, in_edge, ptr = stack.pop()
            if ptr == 0:
                index[node] = low[node] = counter
                counter += 1
            advanced = False
            while ptr < len(adj[node]):
                nbr, edge = adj[node][ptr]
                ptr += 1
                if edge == in_edge:
                    continue
                if index[nbr] < 0:
                    stack.append((node, in_edge, ptr))
                    stack.append((nbr, edge, 0))
                    advanced = True
                    break
                low[node] = min(low[node], index[nbr])
            if not advanced and in_edge >= 0:
                # node finished: fold its low link into the parent
                parent = int(bonds[in_edge, 0]) + int(bonds[in_edge, 1]) - node
                if low[node] > index[parent]:
                    is_bridge[in_edge] = True
                low[parent] = min(low[parent], low[node])
    in_ring = np.zeros(n_atoms, dtype=np.int64)
    for e in range(m):
        if not is_bridge[e]:
            in_ring[int(bonds[e, 0])] = 1
            in_ring[int(bonds[e, 1])] = 1
    return in_ring


def decode_topology(x_onehot: np.ndarray, e_tensor: np.ndarray) -> Molecule2D:
    """Argmax-decode diffused one-hot arrays into a valid topology.

    Each generative atom column takes the argmax inside its one-hot segment;
    a pair (i, j) becomes a bond when the strongest channel of the averaged
    (i, j)/(j, i) rows is not the no-bond channel.  Decoded bonds get stereo
    ``none`` and a conjugated flag only for the aromatic type; degree,
    aromatic and ring columns are then recomputed from the decoded graph.
    """
    n = x_onehot.shape[0]
    if e_tensor.shape != (n, n, EDGE_CHANNELS):
        raise ValueError(
            f"edge tensor shape {e_tensor.shape} does not match {n} atoms"
        )
    atoms = np.zeros((n, 9), dtype=np.int64)
    offset = 0
    for col in GENERATIVE_COLUMNS:
        lo, hi = ATOM_RANGES[col]
        width = hi - lo + 1
        seg = x_onehot[:, offset : offset + width]
        atoms[:, col] = seg.argmax(axis=1) + lo
        offset += width
    bond_rows = []
    for i in range(n):
        for j in range(i + 1, n):
            row = 0.5 * (e_tensor[i, j] + e_tensor[j, i])
            ch = int(row.argmax())
            if ch > 0:
                btype = ch - 1
                conj = 1 if btype == 3 else 0
                bond_rows.append((i, j, btype, 0, conj))
    bonds = (
        np.array(bond_rows, dtype=np.int64)
        if bond_rows
        else np.zeros((0, 5), dtype=np.int64)
    )
    degree, aromatic, in_ring = derived_atom_columns(n, bonds)
    atoms[:, 2] = np.minimum(degree, ATOM_RANGES[2][1])
    atoms[:, 7] = aromatic
    atoms[:, 8] = in_ring
    return Molecule2D(atoms, bonds)
