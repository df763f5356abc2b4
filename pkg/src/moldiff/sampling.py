"""Reverse-diffusion sampling of conformations and topologies."""
from __future__ import annotations

import numpy as np

from .geom import center_coordinates
from .model import Model
from .moldata import (
    Molecule2D,
    Molecule3D,
    MoleculePair,
    decode_topology,
    mirror_upper,
    one_hot_width,
)
from .sde import pc_sample

__all__ = ["sample_conformation", "sample_topology"]


def sample_conformation(
    model: Model,
    topo: Molecule2D,
    rng: np.random.Generator,
    corrector_steps: int = 1,
    eps: float = 0.01,
) -> np.ndarray:
    """One conformation for a topology, centered, shape (n, 3).

    The chain runs in the zero-centroid subspace: the state is re-centered
    after every update and the score network sees centered coordinates only.
    """
    n = topo.n_atoms

    def score_fn(x: np.ndarray, t: float) -> np.ndarray:
        return model.conf_score_np(topo, center_coordinates(x), t)

    return pc_sample(
        score_fn,
        model.sched,
        (n, 3),
        rng,
        corrector_steps=corrector_steps,
        eps=eps,
        project=center_coordinates,
    )


def sample_topology(
    model: Model,
    geom: Molecule3D,
    rng: np.random.Generator,
    corrector_steps: int = 1,
    eps: float = 0.01,
) -> tuple[MoleculePair, np.ndarray, np.ndarray]:
    """Topology for a geometry by jointly reverse-diffusing the one-hot atom
    matrix and the symmetric edge tensor, then argmax-decoding.

    The edge state stays symmetric throughout: priors, noise injections and
    network scores are all symmetric, one effective draw per unordered pair.
    Returns the decoded topology paired with the conditioning geometry (its
    atom-type column comes from the decoded atom matrix) plus the raw final
    atom and edge arrays, which carry the continuous evidence the argmax
    collapses.
    """
    sched = model.sched
    n = geom.n_atoms
    xw = one_hot_width()
    std = sched.prior_std()
    x = std * rng.standard_normal((n, xw))
    e = std * mirror_upper(rng.standard_normal((n, n, 5)))
    steps = sched.steps
    if steps > 0:
        dt = 1.0 / steps
        for k in range(steps):
            t = 1.0 - k * dt
            sx, se = model.topo_scores_np(x, e, geom, t)
            g2 = sched.g2(t)
            root = np.sqrt(g2 * dt)
            x = x - (sched.drift(x, t) - g2 * sx) * dt + root * rng.standard_normal(x.shape)
            e = e - (sched.drift(e, t) - g2 * se) * dt + root * mirror_upper(
                rng.standard_normal(e.shape)
            )
            t_cor = max(t - dt, 1e-3)
            half = 0.5 * eps * eps
            for _ in range(corrector_steps):
                sx, se = model.topo_scores_np(x, e, geom, t_cor)
                x = x + half * sx + eps * rng.standard_normal(x.shape)
                e = e + half * se + eps * mirror_upper(rng.standard_normal(e.shape))
    topo = decode_topology(x, e)
    pair = MoleculePair(topo, Molecule3D(topo.atoms[:, 0].copy(), geom.coords.copy()))
    return pair, x, e
