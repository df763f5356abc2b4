"""Training objectives: two denoising score-matching losses, one contrastive
loss, their weighted sum, and the Adam training loop.

Both generative losses follow the same scheme: draw a time uniformly from
[1e-3, 1], perturb the clean signal with the forward kernel, regress the
network score against the analytic kernel score, and weight the squared
error by s(t)^2 so every time contributes at a comparable scale.  Errors
are averaged per atom (and per unordered pair for edge terms) so molecule
size does not change a sample's weight.

Each component consumes an independent random stream derived from the
caller's seed, so switching components on or off never changes what the
others see.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step
from .encoders import encode_2d, encode_3d, pooled_projection
from .geom import center_coordinates
from .moldata import (
    MaskSpec,
    MoleculePair,
    mirror_upper,
    one_hot_atoms,
    to_dense_edge_tensor,
)
from .model import Model
from .scorenets import conf_score, topo_scores
from .sde import kernel_at

__all__ = [
    "LossWeights",
    "component_rngs",
    "conf_dsm_item",
    "ebm_nce_loss",
    "loss_2d_to_3d",
    "loss_3d_to_2d",
    "topo_dsm_item",
    "total_loss",
    "train",
]

T_FLOOR = 1e-3
# default training-time draw band; callers may narrow it to spend gradient
# where the preconditioned head actually has freedom (at very small s the
# skip path pins the score to the identity-optimal answer, at very large s
# to the prior pull, so draws there teach the body nothing)
T_BAND = (T_FLOOR, 1.0)


@dataclass(frozen=True)
class LossWeights:
    """Mixture weights for the three objectives."""

    contrastive: float = 1.0
    gen_2d3d: float = 1.0
    gen_3d2d: float = 1.0

    def any_active(self) -> bool:
        return any(w != 0.0 for w in (self.contrastive, self.gen_2d3d, self.gen_3d2d))


def component_rngs(seed: int) -> tuple[np.random.Generator, ...]:
    """Independent streams (contrastive, 2d->3d, 3d->2d) for one step."""
    return tuple(
        np.random.default_rng(np.random.SeedSequence((seed, tag)))
        for tag in (1, 2, 3)
    )


def _draw_mask(base: MaskSpec | None, rng: np.random.Generator) -> MaskSpec | None:
    if base is None or base.ratio == 0.0:
        # keep the stream aligned whether or not masking is on
        rng.integers(2**31)
        return None
    return MaskSpec(base.ratio, int(rng.integers(2**31)))


# ---------------------------------------------------------------------------
# 2d -> 3d


def conf_dsm_item(
    pair: MoleculePair,
    t: float,
    z: np.ndarray,
    params: dict[str, Tensor],
    model: Model,
    mask: MaskSpec | None = None,
) -> Tensor:
    """Deterministic per-molecule conformation DSM loss.

    The clean coordinates and the noise are both centered, so the perturbed
    state stays in the zero-centroid subspace where the score net lives; the
    kernel score is then exactly ``-z_c / s(t)``.  Returns
    ``s(t)^2 * mean_atom |target - S|^2`` as a scalar tensor.
    """
    a_t, s_t = kernel_at(model.sched, t)
    r0 = center_coordinates(pair.geom.coords)
    z_c = z - z.mean(axis=0, keepdims=True)
    x_t = a_t * r0 + s_t * z_c
    target = -z_c / s_t
    s_net = conf_score(pair.topo, x_t, t, params, model.cfg, model.sched, mask)
    resid = s_net - ad.constant(target)
    per_atom = ad.tensor_sum(resid * resid, axis=1)
    return ad.mean(per_atom) * ad.constant(np.asarray(s_t * s_t))


def loss_2d_to_3d(
    pairs: list[MoleculePair],
    params: dict[str, Tensor],
    model: Model,
    rng: np.random.Generator,
    mask: MaskSpec | None = None,
    t_band: tuple[float, float] = T_BAND,
) -> Tensor:
    """Batch-mean conformation DSM loss; draws (t, noise, mask seed) per
    molecule from ``rng``."""
    if not pairs:
        raise ValueError("empty batch")
    items = []
    for pair in pairs:
        t = float(rng.uniform(*t_band))
        z = rng.standard_normal((pair.n_atoms, 3))
        m = _draw_mask(mask, rng)
        items.append(conf_dsm_item(pair, t, z, params, model, m))
    return _mean_scalars(items)


# ---------------------------------------------------------------------------
# 3d -> 2d


def topo_dsm_item(
    pair: MoleculePair,
    t: float,
    z_x: np.ndarray,
    z_e: np.ndarray,
    params: dict[str, Tensor],
    model: Model,
    mask: MaskSpec | None = None,
) -> Tensor:
    """Deterministic per-molecule topology DSM loss.

    ``z_e`` is symmetrized by mirroring its upper triangle so each unordered
    pair carries one noise draw.  Node error is averaged per atom, edge
    error per unordered pair (skipped for single-atom molecules), each
    summed over channels, and the total is weighted by s(t)^2.
    """
    n = pair.n_atoms
    a_t, s_t = kernel_at(model.sched, t)
    x0 = one_hot_atoms(pair.topo)
    e0 = to_dense_edge_tensor(pair.topo)
    z_sym = mirror_upper(z_e)
    x_t = a_t * x0 + s_t * z_x
    e_t = a_t * e0 + s_t * z_sym
    sx, se = topo_scores(
        x_t, e_t, pair.geom, t, params, model.cfg, model.sched, mask
    )
    rx = sx - ad.constant(-z_x / s_t)
    loss = ad.mean(ad.tensor_sum(rx * rx, axis=1))
    if n > 1:
        upper = np.triu(np.ones((n, n)), k=1)[:, :, None]
        re = (se - ad.constant(-z_sym / s_t)) * ad.constant(upper)
        n_pairs = n * (n - 1) / 2.0
        loss = loss + ad.tensor_sum(re * re) * ad.constant(np.asarray(1.0 / n_pairs))
    return loss * ad.constant(np.asarray(s_t * s_t))


def loss_3d_to_2d(
    pairs: list[MoleculePair],
    params: dict[str, Tensor],
    model: Model,
    rng: np.random.Generator,
    mask: MaskSpec | None = None,
    t_band: tuple[float, float] = T_BAND,
) -> Tensor:
    """Batch-mean topology DSM loss; draws randomness per molecule."""
    if not pairs:
        raise ValueError("empty batch")
    from .moldata import one_hot_width

    xw = one_hot_width()
    items = []
    for pair in pairs:
        n = pair.n_atoms
        t = float(rng.uniform(*t_band))
        z_x = rng.standard_normal((n, xw))
        z_e = rng.standard_normal((n, n, 5))
        m = _draw_mask(mask, rng)
        items.append(topo_dsm_item(pair, t, z_x, z_e, params, model, m))
    return _mean_scalars(items)


# ---------------------------------------------------------------------------
# contrastive


def ebm_nce_loss(z2: Tensor, z3: Tensor, rng: np.random.Generator) -> Tensor:
    """Noise-contrastive alignment of projected pooled representations.

    ``z2`` and ``z3`` are (batch, proj_dim); row i of each side describes
    the same molecule.  Positives pair row i with row i; negatives pair row
    i with a cyclic in-batch shift by a random nonzero offset, so a negative
    never equals its positive.  With all pair logits zero the loss is
    exactly 2*ln(2); with strongly separated logits it approaches zero.
    """
    b = z2.shape[0]
    if b < 2:
        raise ValueError(f"contrastive loss needs at least 2 molecules, got {b}")
    if z2.shape != z3.shape:
        raise ValueError(f"representation shapes differ: {z2.shape} vs {z3.shape}")
    shift = int(rng.integers(1, b))
    neg_rows = (np.arange(b) + shift) % b
    f_pos = ad.tensor_sum(z2 * z3, axis=1)
    f_neg = ad.tensor_sum(z2 * ad.gather(z3, neg_rows), axis=1)
    return -(ad.mean(ad.logsigmoid(f_pos)) + ad.mean(ad.logsigmoid(-f_neg)))


def _contrastive_batch(
    pairs: list[MoleculePair],
    params: dict[str, Tensor],
    model: Model,
    rng: np.random.Generator,
    mask: MaskSpec | None,
) -> Tensor:
    rows2, rows3 = [], []
    for pair in pairs:
        m = _draw_mask(mask, rng)
        h2 = encode_2d(pair.topo, params, model.cfg, m)
        h3 = encode_3d(pair.geom, params, model.cfg, m)
        rows2.append(ad.reshape(pooled_projection(h2, params, "proj2d"), (1, -1)))
        rows3.append(ad.reshape(pooled_projection(h3, params, "proj3d"), (1, -1)))
    return ebm_nce_loss(ad.concat(rows2, axis=0), ad.concat(rows3, axis=0), rng)


# ---------------------------------------------------------------------------
# combination and training


def total_loss(
    pairs: list[MoleculePair],
    params: dict[str, Tensor],
    model: Model,
    weights: LossWeights,
    seed: int,
    mask: MaskSpec | None = None,
) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of the active objectives.

    Every component reads its own random stream derived from ``seed``, so a
    zero weight skips the work without disturbing the other components; the
    returned dict reports each component's unweighted value (0.0 when off).
    """
    if not weights.any_active():
        raise ValueError("all loss weights are zero; nothing to optimize")
    rng_c, rng_23, rng_32 = component_rngs(seed)
    parts: dict[str, float] = {"contrastive": 0.0, "gen_2d3d": 0.0, "gen_3d2d": 0.0}
    total: Tensor | None = None

    def accumulate(term: Tensor, weight: float) -> Tensor:
        scaled = term * ad.constant(np.asarray(weight))
        return scaled if total is None else total + scaled

    if weights.contrastive != 0.0:
        term = _contrastive_batch(pairs, params, model, rng_c, mask)
        parts["contrastive"] = term.item()
        total = accumulate(term, weights.contrastive)
    if weights.gen_2d3d != 0.0:
        term = loss_2d_to_3d(pairs, params, model, rng_23, mask)
        parts["gen_2d3d"] = term.item()
        total = accumulate(term, weights.gen_2d3d)
    if weights.gen_3d2d != 0.0:
        term = loss_3d_to_2d(pairs, params, model, rng_32, mask)
        parts["gen_3d2d"] = term.item()
        total = accumulate(term, weights.gen_3d2d)
    assert total is not None
    return total, parts


def train(
    pairs: list[MoleculePair],
    model: Model,
    epochs: int,
    batch_size: int,
    lr: float,
    weights: LossWeights,
    seed: int,
    mask: MaskSpec | None = None,
    max_steps: int | None = None,
) -> list[dict[str, float]]:
    """Shuffled minibatch Adam on the weighted objective, in place on
    ``model.params``.

    Returns one history row per epoch with the mean total and component
    losses.  A non-finite loss or gradient aborts immediately rather than
    silently poisoning the parameters.  Deterministic in (config, seed):
    the same call twice yields bitwise-identical parameters.
    """
    if not pairs:
        raise ValueError("empty training corpus")
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x7A)))
    state = AdamState(lr=lr)
    history: list[dict[str, float]] = []
    steps_done = 0
    for epoch in range(epochs):
        order = rng.permutation(len(pairs))
        sums = {"total": 0.0, "contrastive": 0.0, "gen_2d3d": 0.0, "gen_3d2d": 0.0}
        batches = 0
        for start in range(0, len(pairs), batch_size):
            if max_steps is not None and steps_done >= max_steps:
                break
            chunk = [pairs[i] for i in order[start : start + batch_size]]
            if weights.contrastive != 0.0 and len(chunk) < 2:
                continue  # contrastive term undefined on a 1-molecule tail
            params = {k: ad.parameter(v) for k, v in model.params.items()}
            step_seed = int(rng.integers(2**31))
            loss, parts = total_loss(chunk, params, model, weights, step_seed, mask)
            value = loss.item()
            if not np.isfinite(value):
                raise FloatingPointError(
                    f"non-finite loss {value} at epoch {epoch}, step {steps_done}"
                )
            loss.backward()
            grads = {
                k: t.grad for k, t in params.items() if t.grad is not None
            }
            adam_step(model.params, grads, state)
            sums["total"] += value
            for key, v in parts.items():
                sums[key] += v
            batches += 1
            steps_done += 1
        row = {"epoch": float(epoch), "steps": float(steps_done)}
        denom = max(batches, 1)
        row["total"] = sums["total"] / denom
        row["contrastive"] = sums["contrastive"] / denom
        row["gen_2d3d"] = sums["gen_2d3d"] / denom
        row["gen_3d2d"] = sums["gen_3d2d"] / denom
        history.append(row)
        if max_steps is not None and steps_done >= max_steps:
            break
    return history


def _mean_scalars(items: list[Tensor]) -> Tensor:
    stacked = ad.concat([ad.reshape(x, (1,)) for x in items], axis=0)
    return ad.mean(stacked)
