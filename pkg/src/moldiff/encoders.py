"""Modality encoders: topology and geometry to per-atom feature rows.

The 2D encoder embeds every categorical atom and bond column (each table has
one extra row for the mask token) and runs residual message passing over the
bond list.  The 3D encoder sees coordinates only through pairwise distances
inside a cutoff, expanded in Gaussian radial features and turned into
continuous filters, so its output is invariant to rigid motions by
construction.  Both produce (n, hidden) arrays on the autodiff tape.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geom import RbfSpec, rbf_expand
from .moldata import (
    ATOM_RANGES,
    BOND_RANGES,
    MaskSpec,
    Molecule2D,
    Molecule3D,
    apply_mask,
    apply_mask_3d,
    one_hot_width,
)

__all__ = [
    "ModelConfig",
    "encode_2d",
    "encode_3d",
    "init_params",
    "pooled_projection",
    "time_features",
]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes; every width is a free knob with desk-scale defaults."""

    hidden: int = 64
    layers: int = 3
    edge_hidden: int = 64
    attn_layers: int = 2
    time_freqs: int = 16
    rbf: RbfSpec = field(default_factory=RbfSpec)
    pair_cutoff: float = 5.0
    proj_dim: int = 32
    # assumed data scales used to precondition the score heads: the network
    # body regresses an O(1) quantity at every noise level, and closed-form
    # skip/output gains turn that into a score
    data_std_conf: float = 1.5
    data_std_topo: float = 0.5


def time_features(t: float, n_freqs: int) -> np.ndarray:
    """Sinusoidal features of the diffusion time on a geometric frequency
    ladder from 1 to 1000 cycles; shape (2 * n_freqs,)."""
    k = np.arange(n_freqs)
    omega = 2.0 * np.pi * 1000.0 ** (k / max(n_freqs - 1, 1))
    return np.concatenate([np.sin(omega * t), np.cos(omega * t)])


# ---------------------------------------------------------------------------
# parameter construction


def _linear_init(rng, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))


def init_params(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """All parameter blocks of both encoders, both score heads and the
    contrastive projections, keyed by a fixed naming scheme.

    The construction order is deterministic, so checkpoints written from a
    fresh model always lay out arrays identically.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x70)))
    d = cfg.hidden
    w = cfg.edge_hidden
    k = cfg.rbf.count
    f2 = 2 * cfg.time_freqs
    p: dict[str, np.ndarray] = {}

    emb_std = 1.0 / np.sqrt(d)
    for col, (lo, hi) in enumerate(ATOM_RANGES):
        rows = hi - lo + 2  # + mask token row
        p[f"enc2d.atom_emb.{col}"] = rng.normal(0.0, emb_std, size=(rows, d))
    for col, (lo, hi) in enumerate(BOND_RANGES):
        p[f"enc2d.bond_emb.{col}"] = rng.normal(0.0, emb_std, size=(hi - lo + 1, d))
    for layer in range(cfg.layers):
        p[f"enc2d.layer{layer}.w1"] = _linear_init(rng, d, d)
        p[f"enc2d.layer{layer}.b1"] = np.zeros(d)
        p[f"enc2d.layer{layer}.w2"] = _linear_init(rng, d, d)
        p[f"enc2d.layer{layer}.b2"] = np.zeros(d)

    p["enc3d.type_emb"] = rng.normal(
        0.0, emb_std, size=(ATOM_RANGES[0][1] + 2, d)
    )
    for layer in range(cfg.layers):
        p[f"enc3d.layer{layer}.filt_w1"] = _linear_init(rng, k, d)
        p[f"enc3d.layer{layer}.filt_b1"] = np.zeros(d)
        p[f"enc3d.layer{layer}.filt_w2"] = _linear_init(rng, d, d)
        p[f"enc3d.layer{layer}.filt_b2"] = np.zeros(d)
        p[f"enc3d.layer{layer}.out_w"] = _linear_init(rng, d, d)
        p[f"enc3d.layer{layer}.out_b"] = np.zeros(d)

    p["proj2d.w"] = _linear_init(rng, d, cfg.proj_dim)
    p["proj2d.b"] = np.zeros(cfg.proj_dim)
    p["proj3d.w"] = _linear_init(rng, d, cfg.proj_dim)
    p["proj3d.b"] = np.zeros(cfg.proj_dim)

    # conformation score head: pair features gated by radial features,
    # frame projections, attention over co-incident pairs, 3 frame scalars
    p["s23.time_w"] = _linear_init(rng, f2, w)
    p["s23.time_b"] = np.zeros(w)
    p["s23.pair_w1"] = _linear_init(rng, 2 * d, w)
    p["s23.pair_b1"] = np.zeros(w)
    p["s23.pair_w2"] = _linear_init(rng, w, w)
    p["s23.pair_b2"] = np.zeros(w)
    p["s23.rbf_w"] = _linear_init(rng, k, w)
    p["s23.rbf_b"] = np.zeros(w)
    p["s23.geo_w"] = _linear_init(rng, 9, w)
    p["s23.geo_b"] = np.zeros(w)
    for layer in range(cfg.attn_layers):
        p[f"s23.attn{layer}.wq"] = _linear_init(rng, w, w)
        p[f"s23.attn{layer}.wk"] = _linear_init(rng, w, w)
        p[f"s23.attn{layer}.wv"] = _linear_init(rng, w, w)
        p[f"s23.attn{layer}.wo"] = _linear_init(rng, w, w)
        p[f"s23.attn{layer}.bo"] = np.zeros(w)
    p["s23.head_w1"] = _linear_init(rng, w, w)
    p["s23.head_b1"] = np.zeros(w)
    p["s23.head_w2"] = _linear_init(rng, w, 3)
    p["s23.head_b2"] = np.zeros(3)

    # topology score head: node MLP input, dense graph convolutions over the
    # noisy edge tensor, concatenated-depth node head, attention-map edge head
    xw = one_hot_width()
    p["s32.time_w"] = _linear_init(rng, f2, d)
    p["s32.time_b"] = np.zeros(d)
    p["s32.in_w1"] = _linear_init(rng, xw, d)
    p["s32.in_b1"] = np.zeros(d)
    p["s32.in_w2"] = _linear_init(rng, d, d)
    p["s32.in_b2"] = np.zeros(d)
    for layer in range(cfg.layers):
        p[f"s32.gcn{layer}.mix_w"] = _linear_init(rng, 5, 1)
        p[f"s32.gcn{layer}.w"] = _linear_init(rng, d, d)
        p[f"s32.gcn{layer}.wself"] = _linear_init(rng, d, d)
        p[f"s32.gcn{layer}.b"] = np.zeros(d)
    p["s32.node_w1"] = _linear_init(rng, (cfg.layers + 1) * d, d)
    p["s32.node_b1"] = np.zeros(d)
    p["s32.node_w2"] = _linear_init(rng, d, xw)
    p["s32.node_b2"] = np.zeros(xw)
    for layer in range(cfg.layers + 1):
        p[f"s32.edge_q{layer}"] = _linear_init(rng, d, d)
        p[f"s32.edge_k{layer}"] = _linear_init(rng, d, d)
    p["s32.edge_w1"] = _linear_init(rng, cfg.layers + 1 + 5 + cfg.rbf.count, d)
    p["s32.edge_b1"] = np.zeros(d)
    p["s32.edge_w2"] = _linear_init(rng, d, 5)
    p["s32.edge_b2"] = np.zeros(5)
    return p


# ---------------------------------------------------------------------------
# encoders


def _embedding_rows(table: Tensor, values: np.ndarray, lo: int, hi: int, what: str) -> Tensor:
    idx = np.asarray(values, dtype=np.int64) - lo
    # mask token sits one past the range, on the extra table row
    if np.any((idx < 0) | (idx > hi - lo + 1)):
        raise IndexError(f"{what}: value outside range and not the mask token")
    return ad.gather(table, idx)


def encode_2d(
    topo: Molecule2D,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    mask: MaskSpec | None = None,
) -> Tensor:
    """Per-atom topology features, shape (n, hidden).

    With a mask spec, the selected atoms' feature rows are replaced by mask
    tokens before embedding; the bond list is untouched.  Output rows follow
    atom order, so permuting atoms permutes rows.
    """
    if mask is not None and mask.ratio > 0.0:
        topo = apply_mask(topo, mask)
    n = topo.n_atoms
    h = _embedding_rows(
        params["enc2d.atom_emb.0"], topo.atoms[:, 0], *ATOM_RANGES[0], "atom_type"
    )
    for col in range(1, len(ATOM_RANGES)):
        h = h + _embedding_rows(
            params[f"enc2d.atom_emb.{col}"], topo.atoms[:, col], *ATOM_RANGES[col], f"atom col {col}"
        )
    m = topo.bonds.shape[0]
    if m:
        eb = _embedding_rows(
            params["enc2d.bond_emb.0"], topo.bonds[:, 2], *BOND_RANGES[0], "bond type"
        )
        for col in (1, 2):
            eb = eb + _embedding_rows(
                params[f"enc2d.bond_emb.{col}"], topo.bonds[:, col + 2], *BOND_RANGES[col], "bond col"
            )
        src = np.concatenate([topo.bonds[:, 0], topo.bonds[:, 1]])
        dst = np.concatenate([topo.bonds[:, 1], topo.bonds[:, 0]])
        ef = ad.concat([eb, eb], axis=0)
    for layer in range(cfg.layers):
        if m:
            agg = ad.scatter_add(ad.gather(h, src) + ef, dst, n)
        else:
            agg = ad.constant(np.zeros((n, cfg.hidden)))
        u = ad.relu(
            (h + agg) @ params[f"enc2d.layer{layer}.w1"] + params[f"enc2d.layer{layer}.b1"]
        )
        h = h + u @ params[f"enc2d.layer{layer}.w2"] + params[f"enc2d.layer{layer}.b2"]
    return h


def encode_3d(
    geom: Molecule3D,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    mask: MaskSpec | None = None,
) -> Tensor:
    """Per-atom geometry features, shape (n, hidden); rigid-motion invariant.

    With a mask spec, the selected atoms' types are replaced by the mask
    token; coordinates are never masked.
    """
    if mask is not None and mask.ratio > 0.0:
        geom = apply_mask_3d(geom, mask)
    n = geom.n_atoms
    lo, hi = ATOM_RANGES[0]
    h = _embedding_rows(params["enc3d.type_emb"], geom.atom_types, lo, hi, "atom_type")
    coords = np.asarray(geom.coords, dtype=np.float64)
    delta = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((delta * delta).sum(axis=2))
    within = (dist <= cfg.pair_cutoff) & ~np.eye(n, dtype=bool)
    dst, src = np.nonzero(within)  # contribution to dst from src
    feats = ad.constant(rbf_expand(dist[dst, src], cfg.rbf))
    for layer in range(cfg.layers):
        pre = f"enc3d.layer{layer}"
        filt = ad.tanh(feats @ params[f"{pre}.filt_w1"] + params[f"{pre}.filt_b1"])
        filt = filt @ params[f"{pre}.filt_w2"] + params[f"{pre}.filt_b2"]
        if dst.size:
            msg = ad.scatter_add(ad.mul(ad.gather(h, src), filt), dst, n)
        else:
            msg = ad.constant(np.zeros((n, cfg.hidden)))
        h = h + ad.tanh(msg @ params[f"{pre}.out_w"] + params[f"{pre}.out_b"])
    return h


def pooled_projection(
    h: Tensor, params: dict[str, Tensor], which: str
) -> Tensor:
    """Mean-pool atom rows, then apply the named projection head.

    ``which`` is ``proj2d`` or ``proj3d``; output shape (proj_dim,).
    """
    pooled = ad.reshape(ad.mean(h, axis=0), (1, -1))
    out = pooled @ params[f"{which}.w"] + params[f"{which}.b"]
    return ad.reshape(out, (-1,))
