"""Score networks for the two generative directions.

Conformation score (topology + noisy coordinates -> per-atom 3-vectors):
pair features mix embedded topology, radial features of the noisy geometry
and scalars obtained by projecting positions onto per-pair local frames;
attention runs over pairs sharing the first atom; a three-scalar head is
re-assembled against the frame axes.  Because one frame axis is a cross
product, the output is rotation-equivariant but NOT reflection-equivariant:
mirroring the input does not mirror the output, which is what lets the
model tell enantiomers apart.

Topology score (noisy one-hot arrays + geometry -> per-atom and per-pair
rows): node features from the noisy atom matrix plus the invariant geometry
encoding, refined by dense graph convolutions over the noisy edge tensor;
the node head reads the concatenated depth stack, the edge head reads
unnormalized dot-product attention maps of every depth and is symmetrized.

Both nets wrap their body in closed-form skip/output gains (see
``_precondition``) so the body regresses an O(1) quantity at every noise
level while the returned value matches the score's natural magnitude.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import ModelConfig, encode_2d, encode_3d, time_features
from .geom import edge_frames, rbf_expand
from .moldata import (
    EDGE_CHANNELS,
    MaskSpec,
    Molecule2D,
    Molecule3D,
    mirror_upper,
    one_hot_width,
)
from .sde import NoiseSchedule, kernel_at

__all__ = [
    "SymmetryReport",
    "check_symmetry",
    "conf_score",
    "topo_scores",
]

_CENTER_TOL = 1e-6
_SYM_TOL = 1e-9
_SCALE_GUARD = 1e30
# saturation scale (angstrom) for frame-projected positions; generous next
# to bond lengths (~1.5) so in-distribution geometry stays near-linear
_GEO_SAT = 8.0


def _precondition(
    sched: NoiseSchedule, t: float, data_std: float
) -> tuple[float, float, float]:
    """Closed-form gains wrapping a network body into a score estimate.

    With kernel x_t ~ N(a x0, s^2 I) and assumed data scale sd, the score is
    parameterized through a denoised estimate D = c_skip (x/a) + c_out F so
    the body F regresses an O(1) target with bounded sensitivity at every
    noise level.  Returns (c_in, g_body, g_skip) such that

        score(x) = g_body * F(c_in * x, ...) + g_skip * x

    where c_skip = sd^2/(sig^2+sd^2), c_out = sig sd/sqrt(sig^2+sd^2) and
    sig = s/a is the noise-to-signal scale.
    """
    a_t, s_t = kernel_at(sched, t)
    sigma = s_t / a_t
    den = sigma * sigma + data_std * data_std
    c_skip = data_std * data_std / den
    c_out = sigma * data_std / np.sqrt(den)
    c_in = 1.0 / (a_t * np.sqrt(den))
    g_body = a_t * c_out / (s_t * s_t)
    g_skip = (c_skip - 1.0) / (s_t * s_t)
    return c_in, g_body, g_skip


def _pair_structure(topo: Molecule2D, coords: np.ndarray, cutoff: float):
    """Dense pair mask (cutoff neighbours plus bonded pairs), frames and
    frame projections; all plain numpy, constant w.r.t. parameters."""
    n = coords.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        delta = coords[:, None, :] - coords[None, :, :]
        dist = np.sqrt((delta * delta).sum(axis=2))
        bonded = np.zeros((n, n), dtype=bool)
        for row in topo.bonds:
            bonded[int(row[0]), int(row[1])] = True
            bonded[int(row[1]), int(row[0])] = True
        pm = ((dist <= cutoff) | bonded) & ~np.eye(n, dtype=bool)
        # drop pairs separated by more than any physical scale so a wildly
        # off-distribution state mutes the network instead of overflowing
        pm &= np.abs(delta).max(axis=2) < _SCALE_GUARD
        src = np.repeat(np.arange(n), n)
        dst = np.tile(np.arange(n), n)
        frames_flat, valid_flat = edge_frames(coords, src, dst)
        frames = frames_flat.reshape(n, n, 3, 3)
        valid = valid_flat.reshape(n, n)
        mv = pm & valid
        # project displacement and both endpoint positions onto the frame
        p_diff = np.einsum("ijkd,ijd->ijk", frames, delta)
        p_ri = np.einsum("ijkd,id->ijk", frames, coords)
        p_rj = np.einsum("ijkd,jd->ijk", frames, coords)
        geo = np.concatenate([p_diff, p_ri, p_rj], axis=2)
        # saturate: at high noise these projections grow with the noise std,
        # and bounded features keep the net's output scale flat in t; tanh is
        # odd, so the sign structure of the frame axes is untouched
        geo = _GEO_SAT * np.tanh(geo / _GEO_SAT)
    # excluded pairs must contribute exact zeros, never masked garbage
    geo[~mv] = 0.0
    dist = np.where(mv, dist, 0.0)
    return dist, mv, frames, geo, src, dst


def conf_score(
    topo: Molecule2D,
    coords: np.ndarray,
    t: float,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    sched: NoiseSchedule,
    mask: MaskSpec | None = None,
    drop_pseudo_axis: bool = False,
) -> Tensor:
    """Score of the conformation kernel at (coords, t), shape (n, 3).

    ``coords`` must be centered (each column mean within 1e-6 of zero).
    ``drop_pseudo_axis`` is a test hook: it zeroes the head channel of the
    cross-product frame axis, which collapses the network onto its
    reflection-equivariant part.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = topo.n_atoms
    if coords.shape != (n, 3):
        raise ValueError(f"coords shape {coords.shape} does not match {n} atoms")
    if not np.all(np.isfinite(coords)):
        raise ValueError("coords contain non-finite values")
    drift = np.abs(coords.mean(axis=0)).max() if n else 0.0
    scale = max(1.0, float(np.abs(coords).max())) if n else 1.0
    if drift > _CENTER_TOL * scale:
        raise ValueError(
            f"coordinates are not centered (column mean magnitude {drift:.3e})"
        )
    _, s_t = kernel_at(sched, t)
    if s_t == 0.0:
        raise ValueError(f"kernel at t={t} is degenerate; score undefined")
    _, g_body, g_skip = _precondition(sched, t, cfg.data_std_conf)

    h = encode_2d(topo, params, cfg, mask)
    dist, mv, frames, geo, src, dst = _pair_structure(topo, coords, cfg.pair_cutoff)
    w = cfg.edge_hidden
    n2 = n * n
    mask_flat = ad.constant(mv.reshape(n2, 1).astype(np.float64))

    hi = ad.gather(h, src)
    hj = ad.gather(h, dst)
    e2d = ad.relu(
        ad.concat([hi, hj], axis=1) @ params["s23.pair_w1"] + params["s23.pair_b1"]
    )
    e2d = e2d @ params["s23.pair_w2"] + params["s23.pair_b2"]
    radial = ad.constant(
        rbf_expand(dist.reshape(n2), cfg.rbf)
    ) @ params["s23.rbf_w"] + params["s23.rbf_b"]
    geol = ad.constant(geo.reshape(n2, 9)) @ params["s23.geo_w"] + params["s23.geo_b"]
    tv = ad.constant(
        time_features(t, cfg.time_freqs).reshape(1, -1)
    ) @ params["s23.time_w"] + params["s23.time_b"]
    e = (radial * e2d + geol + tv) * mask_flat

    # additive mask: excluded pairs get a large negative logit, so softmax
    # routes no weight there; a neighbourless row degrades to u = 0 because
    # every masked value vector is exactly zero
    logit_mask = ad.constant((mv.astype(np.float64).reshape(n, 1, n) - 1.0) * 1e9)
    scale = ad.constant(np.asarray(1.0 / np.sqrt(w)))
    for layer in range(cfg.attn_layers):
        pre = f"s23.attn{layer}"
        q = ad.reshape(e @ params[f"{pre}.wq"], (n, n, 1, w))
        k = ad.reshape(e @ params[f"{pre}.wk"], (n, 1, n, w))
        v = ad.reshape(e @ params[f"{pre}.wv"], (n, 1, n, w))
        logits = ad.tensor_sum(q * k, axis=3) * scale + logit_mask
        # softmax is shift invariant, so subtracting the row max as a
        # constant changes neither the value nor the gradient
        shifted = ad.exp(logits - ad.constant(logits.value.max(axis=2, keepdims=True)))
        att = shifted / ad.reshape(ad.tensor_sum(shifted, axis=2), (n, n, 1))
        u = ad.tensor_sum(ad.reshape(att, (n, n, n, 1)) * v, axis=2)
        e = e + ad.relu(ad.reshape(u, (n2, w)) @ params[f"{pre}.wo"] + params[f"{pre}.bo"])
        e = e * mask_flat

    c = ad.relu(e @ params["s23.head_w1"] + params["s23.head_b1"])
    c = c @ params["s23.head_w2"] + params["s23.head_b2"]
    if drop_pseudo_axis:
        c = c * ad.constant(np.array([1.0, 0.0, 1.0]))
    contrib = ad.tensor_sum(
        ad.reshape(c, (n, n, 3, 1)) * ad.constant(frames), axis=2
    ) * ad.constant(mv.astype(np.float64)[:, :, None])
    out = ad.tensor_sum(contrib, axis=1)
    # affine pull toward the kernel mean; proportional to coords, hence it
    # transforms equivariantly and leaves every symmetry property intact
    return out * ad.constant(np.asarray(g_body)) + ad.constant(g_skip * coords)


def topo_scores(
    x_t: np.ndarray,
    e_t: np.ndarray,
    geom: Molecule3D,
    t: float,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    sched: NoiseSchedule,
    mask: MaskSpec | None = None,
) -> tuple[Tensor, Tensor]:
    """Scores of the topology kernel at (x_t, e_t, t) given the geometry.

    Returns (node score (n, one-hot width), edge score (n, n, 5)).  The edge
    input must be symmetric in its first two axes within 1e-9; the edge
    output is symmetrized exactly.  Both outputs are invariant to rigid
    motions of the conditioning geometry.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    e_t = np.asarray(e_t, dtype=np.float64)
    n = geom.n_atoms
    xw = one_hot_width()
    if x_t.shape != (n, xw):
        raise ValueError(f"atom matrix shape {x_t.shape}, expected {(n, xw)}")
    if e_t.shape != (n, n, EDGE_CHANNELS):
        raise ValueError(
            f"edge tensor shape {e_t.shape}, expected {(n, n, EDGE_CHANNELS)}"
        )
    asym = np.abs(e_t - e_t.transpose(1, 0, 2)).max() if n else 0.0
    if asym > _SYM_TOL:
        raise ValueError(f"edge tensor is not symmetric (max asymmetry {asym:.3e})")
    _, s_t = kernel_at(sched, t)
    if s_t == 0.0:
        raise ValueError(f"kernel at t={t} is degenerate; score undefined")
    c_in, g_body, g_skip = _precondition(sched, t, cfg.data_std_topo)

    d = cfg.hidden
    hy = encode_3d(geom, params, cfg, mask)
    tv = ad.constant(
        time_features(t, cfg.time_freqs).reshape(1, -1)
    ) @ params["s32.time_w"] + params["s32.time_b"]
    h0 = ad.relu(ad.constant(c_in * x_t) @ params["s32.in_w1"] + params["s32.in_b1"])
    h0 = h0 @ params["s32.in_w2"] + params["s32.in_b2"] + hy + tv

    e_flat = ad.constant((c_in * e_t).reshape(n * n, EDGE_CHANNELS))
    hs = [h0]
    for layer in range(cfg.layers):
        pre = f"s32.gcn{layer}"
        adj = ad.reshape(e_flat @ params[f"{pre}.mix_w"], (n, n))
        h = hs[-1]
        mixed = adj @ (h @ params[f"{pre}.w"]) + h @ params[f"{pre}.wself"] + params[f"{pre}.b"]
        hs.append(ad.tanh(mixed))

    h_cat = ad.concat(hs, axis=1)
    sx = ad.relu(h_cat @ params["s32.node_w1"] + params["s32.node_b1"])
    sx = sx @ params["s32.node_w2"] + params["s32.node_b2"]

    scale = ad.constant(np.asarray(1.0 / np.sqrt(d)))
    maps = []
    for layer, h in enumerate(hs):
        q = h @ params[f"s32.edge_q{layer}"]
        k = h @ params[f"s32.edge_k{layer}"]
        maps.append(ad.reshape((q @ ad.transpose(k, (1, 0))) * scale, (n, n, 1)))
    stack = ad.reshape(ad.concat(maps, axis=2), (n * n, len(hs)))
    # the pair head reads node affinities, the noisy edge channels and the
    # pair distance directly: bonding is largely a distance rule, and
    # per-pair corrections cannot be assembled from node features alone
    delta = geom.coords[:, None, :] - geom.coords[None, :, :]
    pdist = np.sqrt((delta * delta).sum(axis=2)).reshape(n * n)
    pair_in = ad.concat(
        [stack, e_flat, ad.constant(rbf_expand(pdist, cfg.rbf))], axis=1
    )
    se = ad.relu(pair_in @ params["s32.edge_w1"] + params["s32.edge_b1"])
    se = ad.reshape(se @ params["s32.edge_w2"] + params["s32.edge_b2"], (n, n, EDGE_CHANNELS))
    se = (se + ad.transpose(se, (1, 0, 2))) * ad.constant(np.asarray(0.5))

    gb = ad.constant(np.asarray(g_body))
    # skip terms are proportional to the diffused state itself, so node
    # permutation covariance and edge symmetry carry over unchanged
    return sx * gb + ad.constant(g_skip * x_t), se * gb + ad.constant(g_skip * e_t)


# ---------------------------------------------------------------------------
# symmetry verification


@dataclass(frozen=True)
class SymmetryReport:
    """Outcome of one randomized symmetry check.

    ``max_deviation`` is the worst absolute deviation over trials for
    equivariance/invariance kinds, and the worst RELATIVE deviation for the
    reflection kind, whose ``fraction_exceeding`` counts trials with
    relative deviation above the threshold (a reflection check passes when
    at least 95 percent of generic inputs visibly break mirror symmetry).
    """

    kind: str
    net: str
    trials: int
    max_deviation: float
    min_deviation: float
    fraction_exceeding: float
    passed: bool


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    a, b, c, d = q
    return np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d],
        ]
    )


def _trial_inputs(rng: np.random.Generator):
    from .synthetic import gen_synthetic

    pair = gen_synthetic(1, int(rng.integers(2**31)))[0]
    n = pair.n_atoms
    coords = rng.normal(0.0, 1.5, size=(n, 3))
    coords -= coords.mean(axis=0)
    t = float(rng.uniform(1e-3, 1.0))
    return pair, coords, t


def check_symmetry(
    kind: str,
    net: str,
    params_np: dict[str, np.ndarray],
    cfg: ModelConfig,
    sched: NoiseSchedule,
    trials: int,
    seed: int = 0,
    tol: float | None = None,
    drop_pseudo_axis: bool = False,
) -> SymmetryReport:
    """Probe one symmetry of one score network on random inputs.

    ``kind`` is ``rotation``, ``reflection``, ``translation`` or
    ``permutation``; ``net`` is ``conf`` (topology -> conformation score) or
    ``topo`` (geometry -> topology score).  Random molecules get generic
    gaussian coordinates, so degenerate frames do not occur.  Default
    tolerances: 1e-6 for rotation, 1e-9 for translation and permutation, and
    a 1e-3 relative-deviation floor for reflection.
    """
    if net not in ("conf", "topo"):
        raise ValueError(f"unknown net '{net}'")
    if kind not in ("rotation", "reflection", "translation", "permutation"):
        raise ValueError(f"unknown symmetry kind '{kind}'")
    if net == "topo" and kind == "reflection":
        raise ValueError("reflection asymmetry is a property of the conf net only")
    if tol is None:
        tol = {"rotation": 1e-6, "reflection": 1e-3, "translation": 1e-9, "permutation": 1e-9}[kind]
    params = {k: ad.constant(v) for k, v in params_np.items()}
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xCEC)))
    devs = np.zeros(trials)
    for trial in range(trials):
        pair, coords, t = _trial_inputs(rng)
        if net == "conf":
            devs[trial] = _conf_trial(
                kind, pair, coords, t, params, cfg, sched, rng, drop_pseudo_axis
            )
        else:
            devs[trial] = _topo_trial(kind, pair, coords, t, params, cfg, sched, rng)
    if kind == "reflection":
        frac = float((devs > tol).mean())
        return SymmetryReport(
            kind, net, trials, float(devs.max()), float(devs.min()), frac, frac >= 0.95
        )
    worst = float(devs.max())
    return SymmetryReport(
        kind, net, trials, worst, float(devs.min()), float((devs > tol).mean()), worst < tol
    )


def _conf_trial(kind, pair, coords, t, params, cfg, sched, rng, drop):
    base = conf_score(
        pair.topo, coords, t, params, cfg, sched, drop_pseudo_axis=drop
    ).value
    if kind == "rotation":
        rot = _random_rotation(rng)
        moved = conf_score(
            pair.topo, coords @ rot.T, t, params, cfg, sched, drop_pseudo_axis=drop
        ).value
        return np.abs(moved - base @ rot.T).max()
    if kind == "reflection":
        rot = _random_rotation(rng)
        mirror = rot @ np.diag([1.0, 1.0, -1.0])
        moved = conf_score(
            pair.topo, coords @ mirror.T, t, params, cfg, sched, drop_pseudo_axis=drop
        ).value
        num = np.linalg.norm(moved - base @ mirror.T)
        return num / max(np.linalg.norm(base), 1e-12)
    if kind == "translation":
        shifted = coords + rng.normal(0.0, 5.0, size=3)
        shifted = shifted - shifted.mean(axis=0)
        moved = conf_score(
            pair.topo, shifted, t, params, cfg, sched, drop_pseudo_axis=drop
        ).value
        return np.abs(moved - base).max()
    perm = rng.permutation(pair.n_atoms)
    ptopo = _permute_topology(pair.topo, perm)
    moved = conf_score(
        ptopo, coords[perm], t, params, cfg, sched, drop_pseudo_axis=drop
    ).value
    return np.abs(moved - base[perm]).max()


def _topo_trial(kind, pair, coords, t, params, cfg, sched, rng):
    from .moldata import one_hot_atoms, to_dense_edge_tensor
    from .sde import perturb

    geom = Molecule3D(pair.geom.atom_types, coords)
    x0 = one_hot_atoms(pair.topo)
    e0 = to_dense_edge_tensor(pair.topo)
    noise = np.random.default_rng(int(rng.integers(2**31)))
    x_t, _ = perturb(x0, t, sched, noise)
    e_raw = noise.standard_normal(e0.shape)
    a_t, s_t = kernel_at(sched, t)
    e_t = a_t * e0 + s_t * mirror_upper(e_raw)
    sx, se = topo_scores(x_t, e_t, geom, t, params, cfg, sched)
    sx, se = sx.value, se.value
    if kind == "rotation":
        rot = _random_rotation(rng)
        moved = Molecule3D(geom.atom_types, coords @ rot.T)
    elif kind == "translation":
        moved = Molecule3D(geom.atom_types, coords + rng.normal(0.0, 5.0, size=3))
    else:
        perm = rng.permutation(pair.n_atoms)
        mgeom = Molecule3D(geom.atom_types[perm], coords[perm])
        mx, me = topo_scores(
            x_t[perm], e_t[perm][:, perm], mgeom, t, params, cfg, sched
        )
        return max(
            np.abs(mx.value - sx[perm]).max(),
            np.abs(me.value - se[perm][:, perm]).max(),
        )
    mx, me = topo_scores(x_t, e_t, moved, t, params, cfg, sched)
    return max(np.abs(mx.value - sx).max(), np.abs(me.value - se).max())


def _permute_topology(topo: Molecule2D, perm: np.ndarray) -> Molecule2D:
    """Relabel atoms by ``perm`` (new index of old atom i is inv[i])."""
    inv = np.argsort(perm)
    atoms = topo.atoms[perm]
    bonds = topo.bonds.copy()
    if bonds.shape[0]:
        bi = inv[bonds[:, 0]]
        bj = inv[bonds[:, 1]]
        lo = np.minimum(bi, bj)
        hi = np.maximum(bi, bj)
        bonds[:, 0] = lo
        bonds[:, 1] = hi
        order = np.lexsort((bonds[:, 1], bonds[:, 0]))
        bonds = bonds[order]
    return Molecule2D(atoms, bonds)
