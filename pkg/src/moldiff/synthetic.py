"""Deterministic toy molecule corpus.

Three topology families: chains, rings and branched chains, 3 to 12 atoms.
Geometry is a fixed function of the topology (bond length 1.5, tetrahedral
zigzag angles for chains, regular polygons for rings, out-of-plane branch
stubs) plus a small seeded jitter, so conformation generation is a learnable
target.  Six-membered rings are emitted as aromatic.
"""
from __future__ import annotations

import numpy as np

from .geom import center_coordinates
from .moldata import Molecule2D, Molecule3D, MoleculePair, derived_atom_columns

__all__ = ["gen_synthetic", "molecule_seed"]

BOND_LENGTH = 1.5
JITTER = 0.05
# tetrahedral zigzag: successive bonds open at 109.47 degrees
_HALF = np.deg2rad(109.47128 / 2.0)
_STEP_X = BOND_LENGTH * np.sin(_HALF)
_STEP_Y = BOND_LENGTH * np.cos(_HALF)

_ELEMENTS = np.array([6, 6, 6, 6, 7, 8], dtype=np.int64)  # carbon-heavy
_VALENCE = {6: 4, 7: 3, 8: 2}


def molecule_seed(seed: int, index: int) -> np.random.Generator:
    """Independent generator for one molecule, stable in (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence((seed, index)))


def _chain_coords(n: int) -> np.ndarray:
    xs = np.arange(n) * _STEP_X
    ys = (np.arange(n) % 2) * _STEP_Y
    return np.stack([xs, ys, np.zeros(n)], axis=1)


def _ring_coords(n: int) -> np.ndarray:
    radius = BOND_LENGTH / (2.0 * np.sin(np.pi / n))
    phi = 2.0 * np.pi * np.arange(n) / n
    return np.stack([radius * np.cos(phi), radius * np.sin(phi), np.zeros(n)], axis=1)


def _assemble(
    kind: str, n_backbone: int, branches: list[int], rng: np.random.Generator
) -> MoleculePair:
    if kind == "ring":
        coords = _ring_coords(n_backbone)
        bonds_ij = [(k, (k + 1) % n_backbone) for k in range(n_backbone)]
        aromatic = n_backbone == 6
    else:
        coords = _chain_coords(n_backbone)
        bonds_ij = [(k, k + 1) for k in range(n_backbone - 1)]
        aromatic = False
    coords = list(coords)
    # branch stubs leave the backbone plane, alternating sides
    for b, host in enumerate(branches):
        side = 1.0 if b % 2 == 0 else -1.0
        coords.append(coords[host] + np.array([0.0, 0.3 * side, side * 1.47]))
        bonds_ij.append((host, n_backbone + b))
    n = len(coords)
    coords = np.array(coords, dtype=np.float64)

    btype = 3 if aromatic else 0
    rows = []
    for i, j in bonds_ij:
        i, j = (i, j) if i < j else (j, i)
        on_ring = aromatic and i < n_backbone and j < n_backbone
        rows.append((i, j, btype if on_ring else 0, 0, 1 if on_ring else 0))
    rows.sort()
    bonds = np.array(rows, dtype=np.int64)

    types = _ELEMENTS[rng.integers(0, len(_ELEMENTS), size=n)]
    if aromatic:
        types[:n_backbone] = 6
    degree, arom_col, in_ring = derived_atom_columns(n, bonds)
    atoms = np.zeros((n, 9), dtype=np.int64)
    atoms[:, 0] = types
    atoms[:, 2] = degree
    atoms[:, 4] = np.maximum(
        np.array([_VALENCE[int(t)] for t in types]) - degree, 0
    )
    atoms[:, 6] = np.where(arom_col == 1, 1, 2)  # sp2 on aromatic atoms, sp3 otherwise
    atoms[:, 7] = arom_col
    atoms[:, 8] = in_ring

    coords = coords + rng.uniform(-JITTER, JITTER, size=coords.shape)
    coords = center_coordinates(coords)
    return MoleculePair(Molecule2D(atoms, bonds), Molecule3D(types.copy(), coords))


def gen_synthetic(n_molecules: int, seed: int) -> list[MoleculePair]:
    """Generate a corpus of ``n_molecules`` toy pairs, deterministic in seed.

    Every record validates under the corpus format and carries centered
    coordinates.
    """
    if n_molecules < 0:
        raise ValueError("n_molecules must be nonnegative")
    pairs = []
    for index in range(n_molecules):
        rng = molecule_seed(seed, index)
        kind = ("chain", "ring", "branched")[int(rng.integers(0, 3))]
        if kind == "chain":
            n_backbone = int(rng.integers(3, 13))
            branches: list[int] = []
        elif kind == "ring":
            n_backbone = int(rng.integers(3, 9))
            branches = []
        else:
            n_backbone = int(rng.integers(3, 9))
            n_branch = int(rng.integers(1, min(4, 13 - n_backbone)))
            hosts = rng.choice(n_backbone, size=n_branch, replace=False)
            branches = [int(h) for h in np.sort(hosts)]
        pairs.append(_assemble(kind, n_backbone, branches, rng))
    return pairs
