"""Rigid-motion geometry: local frames, radial features, and aligned RMSD.

Local frames are built per ordered atom pair from the two position vectors;
projections onto a frame turn vectors into rotation-invariant scalars and
``tensorize`` turns scalars back into vectors.  Because the second axis is a
cross product, a mirror image flips its sign: scores assembled from these
frames distinguish a molecule from its reflection.

Positions enter the frame formula directly, so the frame depends on where
the origin sits.  Callers are expected to center coordinates first; the
score networks enforce that.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DegenerateFrameError",
    "LocalFrame",
    "RbfSpec",
    "build_local_frame",
    "center_coordinates",
    "edge_frames",
    "kabsch_rmsd",
    "project",
    "rbf_expand",
    "tensorize",
]

_EPS = 1e-10


class DegenerateFrameError(ValueError):
    """Raised when a pair of positions does not define a frame."""


def center_coordinates(coords: np.ndarray) -> np.ndarray:
    """Subtract the column mean so each coordinate axis averages to zero."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array, got {coords.shape}")
    return coords - coords.mean(axis=0, keepdims=True)


@dataclass(frozen=True)
class LocalFrame:
    """Orthonormal basis attached to an ordered pair of positions.

    ``e1`` points from the second atom to the first, ``e2`` is the normalized
    cross product of the two position vectors and ``e3 = e1 x e2``.  ``e2``
    is a pseudo-vector: under reflection it picks up a sign the other two
    axes do not.
    """

    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray

    def as_matrix(self) -> np.ndarray:
        return np.stack([self.e1, self.e2, self.e3])


def build_local_frame(r_i: np.ndarray, r_j: np.ndarray) -> LocalFrame:
    """Frame for the ordered pair (i, j).

    Raises
    ------
    DegenerateFrameError
        If the two positions coincide or are collinear with the origin
        (zero cross product), in which case no frame exists.
    """
    r_i = np.asarray(r_i, dtype=np.float64)
    r_j = np.asarray(r_j, dtype=np.float64)
    diff = r_i - r_j
    d = np.linalg.norm(diff)
    if d < _EPS:
        raise DegenerateFrameError(f"coincident positions, |r_i - r_j| = {d:.3e}")
    cross = np.cross(r_i, r_j)
    c = np.linalg.norm(cross)
    if c < _EPS:
        raise DegenerateFrameError(
            f"positions collinear with the origin, |r_i x r_j| = {c:.3e}"
        )
    e1 = diff / d
    e2 = cross / c
    e3 = np.cross(e1, e2)
    return LocalFrame(e1, e2, e3)


def edge_frames(
    coords: np.ndarray, src: np.ndarray, dst: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Frames for many ordered pairs at once.

    Returns ``(frames, valid)`` where ``frames`` has shape (m, 3, 3) with
    rows e1, e2, e3 and ``valid`` marks pairs whose frame exists.  Rows of
    degenerate pairs are zero instead of raising, so callers can mask their
    contributions out.
    """
    coords = np.asarray(coords, dtype=np.float64)
    r_i = coords[src]
    r_j = coords[dst]
    diff = r_i - r_j
    d = np.linalg.norm(diff, axis=1)
    cross = np.cross(r_i, r_j)
    c = np.linalg.norm(cross, axis=1)
    valid = (d >= _EPS) & (c >= _EPS)
    safe_d = np.where(valid, d, 1.0)
    safe_c = np.where(valid, c, 1.0)
    e1 = diff / safe_d[:, None]
    e2 = cross / safe_c[:, None]
    e3 = np.cross(e1, e2)
    frames = np.stack([e1, e2, e3], axis=1)
    frames[~valid] = 0.0
    return frames, valid


def project(v: np.ndarray, frame: LocalFrame | np.ndarray) -> np.ndarray:
    """Coordinates of a vector in a frame: ``(v . e1, v . e2, v . e3)``."""
    mat = frame.as_matrix() if isinstance(frame, LocalFrame) else np.asarray(frame)
    return mat @ np.asarray(v, dtype=np.float64)


def tensorize(scalars: np.ndarray, frame: LocalFrame | np.ndarray) -> np.ndarray:
    """Vector rebuilt from frame coordinates: ``sum_k s_k e_k``."""
    mat = frame.as_matrix() if isinstance(frame, LocalFrame) else np.asarray(frame)
    return mat.T @ np.asarray(scalars, dtype=np.float64)


@dataclass(frozen=True)
class RbfSpec:
    """Gaussian radial basis grid: K centers evenly spaced on [0, cutoff]."""

    count: int = 16
    cutoff: float = 5.0
    gamma: float = 10.0

    def __post_init__(self):
        if self.count < 2:
            raise ValueError(f"need at least 2 centers, got {self.count}")
        if not self.cutoff > 0.0:
            raise ValueError(f"cutoff must be positive, got {self.cutoff}")
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    def centers(self) -> np.ndarray:
        return np.linspace(0.0, self.cutoff, self.count)


def rbf_expand(distances: np.ndarray, spec: RbfSpec) -> np.ndarray:
    """Expand distances into Gaussian radial features.

    Feature k of distance d is ``exp(-gamma * (d - mu_k)^2)`` with centers
    ``mu_k`` from the spec.  Output shape is ``distances.shape + (K,)``.
    """
    d = np.asarray(distances, dtype=np.float64)
    if np.any(d < 0.0):
        raise ValueError("rbf_expand: distances must be nonnegative")
    mu = spec.centers()
    return np.exp(-spec.gamma * (d[..., None] - mu) ** 2)


def kabsch_rmsd(p: np.ndarray, q: np.ndarray) -> float:
    """RMSD of two conformations after optimal proper-rotation alignment.

    Both inputs are centered, then ``q`` is rotated onto ``p`` with the
    best rotation of determinant +1.  Mirror images are NOT aligned away:
    restricting to proper rotations keeps chirality visible in the score.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"conformation shapes differ: {p.shape} vs {q.shape}")
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"expected (n, 3) conformations, got {p.shape}")
    pc = p - p.mean(axis=0)
    qc = q - q.mean(axis=0)
    if np.array_equal(pc, qc):
        return 0.0  # identical sets align exactly; skip SVD round-off
    h = qc.T @ pc
    u, _, vt = np.linalg.svd(h)
    sign = np.sign(np.linalg.det(u @ vt))
    # flip the smallest singular direction instead of allowing a reflection
    d = np.diag([1.0, 1.0, sign])
    rot = u @ d @ vt
    diff = qc @ rot - pc
    return float(np.sqrt((diff * diff).sum() / p.shape[0]))
