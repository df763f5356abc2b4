"""End-to-end acceptance gauntlet: ten release gates, one test each.

Run ``python3 -m pytest tests/test_acceptance.py -v`` to get one pass/fail
line per gate (add ``-s`` for the measured numbers).  Gates 6 and 7 share
one trained model and dominate the runtime; the whole file takes about ten
minutes on a single CPU core.
"""
import time

import numpy as np
import pytest

import moldiff.autodiff as ad
from moldiff.cli import main
from moldiff.config import load_config
from moldiff.encoders import ModelConfig
from moldiff.geom import (
    DegenerateFrameError,
    RbfSpec,
    build_local_frame,
    edge_frames,
    kabsch_rmsd,
    project,
    tensorize,
)
from moldiff.metrics import bond_auc, cov_mat
from moldiff.model import Model
from moldiff.objectives import LossWeights, ebm_nce_loss, total_loss, train
from moldiff.sampling import sample_conformation, sample_topology
from moldiff.scorenets import check_symmetry
from moldiff.sde import NoiseSchedule, dsm_target, kernel_at, langevin_corrector, pc_sample, perturb
from moldiff.synthetic import gen_synthetic

AUDIT_CFG = ModelConfig(
    hidden=12, layers=2, edge_hidden=10, attn_layers=2, time_freqs=4,
    rbf=RbfSpec(count=8, cutoff=5.0, gamma=10.0), pair_cutoff=5.0, proj_dim=6,
)
AUDIT_SCHED = NoiseSchedule(variant="ve", sigma_min=0.01, sigma_max=8.0)

TINY_CFG = ModelConfig(
    hidden=8, layers=1, edge_hidden=8, attn_layers=1, time_freqs=4,
    rbf=RbfSpec(count=6, cutoff=5.0, gamma=10.0), pair_cutoff=5.0, proj_dim=4,
)

# settings for the trained-model gates, frozen by the tuning runs under
# notes in the README; two learning-rate stages inside the shared step cap
TRAIN_OVERRIDES = {
    "model.hidden": "48", "model.edge_hidden": "48",
    "model.layers": "2", "model.attn_layers": "1",
    "model.proj_dim": "16", "model.time_freqs": "8",
    "sde.variant": "ve", "sde.sigma_max": "7.0", "sde.steps": "250",
}
TRAIN_BATCH = 24
TRAIN_LR, TRAIN_LR2 = 3e-3, 8e-4
TRAIN_STEPS1, TRAIN_STEPS2 = 1400, 600


def random_rotation(rng):
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


# ---------------------------------------------------------------------------
# gate 1: randomized symmetry audit, 1000 trials per kind, under a minute


def test_01_symmetry_audit_1000_trials():
    t0 = time.perf_counter()
    model = Model.init(AUDIT_CFG, AUDIT_SCHED, seed=0)
    plan = [
        ("conf", "rotation", 1e-6),
        ("conf", "translation", 1e-9),
        ("conf", "permutation", 1e-9),
        ("conf", "reflection", 1e-3),
        ("topo", "rotation", 1e-9),
        ("topo", "translation", 1e-9),
    ]
    for net, kind, tol in plan:
        rep = check_symmetry(
            kind, net, model.params, AUDIT_CFG, AUDIT_SCHED,
            trials=1000, seed=0, tol=tol,
        )
        assert rep.trials == 1000
        assert rep.passed, (net, kind, rep)
        if kind == "reflection":
            assert rep.fraction_exceeding >= 0.95
            print(f"{net}/{kind}: {rep.fraction_exceeding:.1%} of inputs break "
                  f"mirror symmetry (need >= 95%)")
        else:
            assert rep.max_deviation < tol
            print(f"{net}/{kind}: max deviation {rep.max_deviation:.2e} < {tol:g}")
    elapsed = time.perf_counter() - t0
    print(f"symmetry audit: {elapsed:.1f}s (budget 60s)")
    assert elapsed < 60.0


# ---------------------------------------------------------------------------
# gate 2: frame algebra


def test_02_frame_algebra():
    rng = np.random.default_rng(2)
    for _ in range(200):
        ri, rj = rng.standard_normal(3), rng.standard_normal(3)
        fr = build_local_frame(ri, rj)
        basis = fr.as_matrix()
        assert np.abs(basis @ basis.T - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(basis) - 1.0) < 1e-12

        rot = random_rotation(rng)
        rotated = build_local_frame(rot @ ri, rot @ rj).as_matrix()
        assert np.abs(rotated - basis @ rot.T).max() < 1e-9

        mirror = rot @ np.diag([1.0, 1.0, -1.0])
        mirrored = build_local_frame(mirror @ ri, mirror @ rj).as_matrix()
        expect = basis @ mirror.T
        expect[1] *= -1.0
        assert np.abs(mirrored - expect).max() < 1e-9

        v = rng.standard_normal(3)
        assert np.abs(tensorize(project(v, fr), fr) - v).max() < 1e-12

    # degenerate pairs: the scalar builder raises, the batch builder skips
    with pytest.raises(DegenerateFrameError):
        build_local_frame(np.array([1.0, 0.0, 0.0]), np.array([2.0, 0.0, 0.0]))
    with pytest.raises(DegenerateFrameError):
        build_local_frame(np.zeros(3), np.array([1.0, 1.0, 0.0]))
    coords = np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.3, 1.1, -0.4]])
    frames, valid = edge_frames(coords, np.array([0, 0]), np.array([1, 2]))
    assert not valid[0] and valid[1]
    assert np.all(frames[~valid] == 0.0) and np.all(np.isfinite(frames))
    print("frame algebra: orthonormal to 1e-12, covariant to 1e-9, "
          "degenerate pairs raise/skip")


# ---------------------------------------------------------------------------
# gate 3: forward-kernel fidelity against Monte-Carlo and the score by
# finite differences of the log-density


def test_03_kernel_fidelity_monte_carlo():
    draws = 100_000
    x0 = np.array([1.5, -0.7, 0.4])
    for sched in (
        NoiseSchedule(variant="ve", sigma_min=0.01, sigma_max=10.0),
        NoiseSchedule(variant="vp", beta_min=0.1, beta_max=10.0),
    ):
        rng = np.random.default_rng(33)
        for t in np.round(np.linspace(0.0, 1.0, 11), 10):
            a, s = kernel_at(sched, float(t))
            tiled = np.broadcast_to(x0, (draws, 3))
            sample, _ = perturb(tiled, float(t), sched, rng)
            # the 1e-9 slack covers summation round-off when s = 0 collapses
            # the standard error to zero (vp at t = 0)
            se_mean = 3.0 * s / np.sqrt(draws)
            assert np.abs(sample.mean(axis=0) - a * x0).max() <= se_mean + 1e-9
            se_std = 3.0 * s / np.sqrt(2.0 * (draws - 1))
            assert np.abs(sample.std(axis=0, ddof=1) - s).max() <= se_std + 1e-9

            if s == 0.0:
                continue  # point kernel: no density to differentiate
            x_t = sample[0]
            target = dsm_target(x0, x_t, float(t), sched)
            h = 1e-6

            def logp(x):
                r = x - a * x0
                return -float(r @ r) / (2.0 * s * s)

            for i in range(3):
                ep = np.zeros(3)
                ep[i] = h
                fd = (logp(x_t + ep) - logp(x_t - ep)) / (2.0 * h)
                assert abs(fd - target[i]) <= 1e-6 * max(1.0, abs(target[i]))
    print(f"kernel moments match {draws} Monte-Carlo draws within 3 standard "
          "errors on an 11-point time grid; kernel score matches the "
          "log-density slope to 1e-6")


# ---------------------------------------------------------------------------
# gate 4: gradient fidelity, engine-wide and through the full objective


def test_04_gradient_fidelity():
    rng = np.random.default_rng(4)
    worst = 0.0
    for case in range(100):
        m = int(rng.integers(2, 6))
        k = int(rng.integers(2, 6))
        d = int(rng.integers(2, 6))
        arrs = [rng.standard_normal((m, k)),
                rng.standard_normal((k, d)),
                rng.standard_normal(d)]
        mode = case % 4
        perm = rng.permutation(m)

        def graph(leaves):
            a, b, v = leaves
            h = ad.tanh(a @ b)
            if mode == 0:
                s = ad.sigmoid(h) + ad.relu(h) * ad.constant(np.asarray(0.5))
            elif mode == 1:
                s = ad.exp(h * ad.constant(np.asarray(0.3))) + ad.sqrt(
                    h * h + ad.constant(np.asarray(1.0))
                )
            elif mode == 2:
                s = ad.logsigmoid(h) * ad.sigmoid(h)
            else:
                s = ad.gather(h, perm) + h
            pooled = ad.tensor_sum(s * ad.reshape(v, (1, d)), axis=1)
            return ad.mean(pooled)

        worst = max(worst, ad.grad_check(graph, arrs))
    assert worst < 1e-5
    print(f"engine vs central differences: worst relative error {worst:.2e} "
          "over 100 random graphs")

    # through the full training objective, on a 5% sample of parameters
    sched = NoiseSchedule(variant="ve", sigma_min=0.01, sigma_max=8.0)
    model = Model.init(TINY_CFG, sched, seed=11)
    chunk = gen_synthetic(3, seed=21)
    weights = LossWeights()
    step_seed = 77

    tracked = {k: ad.parameter(v) for k, v in model.params.items()}
    loss, _ = total_loss(chunk, tracked, model, weights, step_seed, None)
    loss.backward()
    grads = {k: tracked[k].grad for k in tracked}

    names = sorted(model.params)
    sizes = np.array([model.params[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    n_pick = int(round(0.05 * total))
    picks = rng.choice(total, size=n_pick, replace=False)
    h = 1e-5
    worst_obj = 0.0
    for flat in picks:
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, idx = names[which], int(flat - offsets[which])
        vals = []
        for sign in (+1.0, -1.0):
            shadow = {k: v.copy() for k, v in model.params.items()}
            shadow[name].flat[idx] += sign * h
            frozen = {k: ad.constant(v) for k, v in shadow.items()}
            value, _ = total_loss(chunk, frozen, model, weights, step_seed, None)
            vals.append(value.item())
        fd = (vals[0] - vals[1]) / (2.0 * h)
        g = float(grads[name].flat[idx])
        worst_obj = max(worst_obj, abs(g - fd) / max(abs(g), abs(fd), 1.0))
    assert worst_obj < 1e-4
    print(f"objective gradients: worst relative error {worst_obj:.2e} over "
          f"{n_pick} of {total} parameter entries")


# ---------------------------------------------------------------------------
# gate 5: sampling machinery on analytically solvable targets


def test_05_samplers_on_analytic_targets():
    t0 = time.perf_counter()

    # langevin chains against a standard normal score
    eps, steps, chains = 0.1, 500, 10_000
    rng = np.random.default_rng(55)
    x = langevin_corrector(
        np.zeros(chains), lambda v: -v, eps, steps, rng
    )
    # the discrete chain x' = (1 - eps^2/2) x + eps z has stationary
    # variance eps^2 / (1 - (1 - eps^2/2)^2), slightly above 1
    var_star = eps * eps / (1.0 - (1.0 - 0.5 * eps * eps) ** 2)
    assert abs(float(x.mean())) < 0.05
    assert abs(float(x.var()) - var_star) < 0.05 * var_star
    print(f"langevin: mean {x.mean():+.4f} (|.| < 0.05), variance "
          f"{x.var():.4f} vs discrete stationary {var_star:.4f} (within 5%)")

    # full predictor-corrector against exact diffused-Gaussian scores
    data_std = 2.0
    for sched in (
        NoiseSchedule(variant="ve", sigma_min=0.01, sigma_max=10.0, steps=250),
        NoiseSchedule(variant="vp", beta_min=0.1, beta_max=10.0, steps=250),
    ):
        def score_fn(v, t):
            a, s = kernel_at(sched, t)
            return -v / (a * a * data_std * data_std + s * s)

        out = pc_sample(score_fn, sched, (10_000,), np.random.default_rng(56))
        want = np.sqrt(data_std**2 + kernel_at(sched, 0.0)[1] ** 2)
        got = float(out.std())
        assert abs(got - want) < 0.05 * want
        assert abs(float(out.mean())) < 0.1
        print(f"pc sampling ({sched.variant}): std {got:.3f} vs exact "
              f"{want:.3f} (within 5%), mean {out.mean():+.3f}")
    elapsed = time.perf_counter() - t0
    print(f"sampler gate: {elapsed:.1f}s (budget 120s)")
    assert elapsed < 120.0


# ---------------------------------------------------------------------------
# gates 6 and 7 share one trained model


@pytest.fixture(scope="module")
def trained_bundle():
    cfg = load_config(None, dict(TRAIN_OVERRIDES))
    corpus = gen_synthetic(200, seed=0)
    model = Model.init(cfg.model_config(), cfg.schedule(), seed=0)
    untrained = Model.init(cfg.model_config(), cfg.schedule(), seed=0)

    t0 = time.perf_counter()
    train(corpus, model, epochs=10_000, batch_size=TRAIN_BATCH, lr=TRAIN_LR,
          weights=LossWeights(), seed=1, max_steps=TRAIN_STEPS1)
    train(corpus, model, epochs=10_000, batch_size=TRAIN_BATCH, lr=TRAIN_LR2,
          weights=LossWeights(), seed=2, max_steps=TRAIN_STEPS2)
    t_train = time.perf_counter() - t0

    t0 = time.perf_counter()
    rmsds = []
    for i, pair in enumerate(corpus[:30]):
        rng = np.random.default_rng((123, i))
        coords = sample_conformation(model, pair.topo, rng)
        rmsds.append(kabsch_rmsd(pair.geom.coords, coords))
    base = []
    for i, pair in enumerate(corpus[:5]):
        rng = np.random.default_rng((123, i))
        coords = sample_conformation(untrained, pair.topo, rng)
        base.append(kabsch_rmsd(pair.geom.coords, coords))
    t_sample = time.perf_counter() - t0

    return {
        "model": model,
        "rmsd": float(np.mean(rmsds)),
        "rmsd_untrained": float(np.mean(base)),
        "seconds": t_train + t_sample,
    }


def test_06_trained_conformations_beat_reference_bar(trained_bundle):
    rmsd = trained_bundle["rmsd"]
    base = trained_bundle["rmsd_untrained"]
    secs = trained_bundle["seconds"]
    print(f"conformation gate: mean aligned rmsd {rmsd:.3f} A (bar 0.5), "
          f"untrained {base:.3e}, ratio {rmsd / base:.3e} (bar 0.5), "
          f"{secs:.0f}s (budget 600s)")
    assert rmsd < 0.5
    assert rmsd <= 0.5 * base
    assert secs < 600.0


def test_07_held_out_bond_ranking(trained_bundle):
    model = trained_bundle["model"]
    held = gen_synthetic(50, seed=1000)
    labels, scores = [], []
    for i, pair in enumerate(held[:25]):
        rng = np.random.default_rng((456, i))
        _, _, e = sample_topology(model, pair.geom, rng)
        n = pair.n_atoms
        bonded = np.zeros((n, n), dtype=bool)
        for row in pair.topo.bonds:
            bonded[int(row[0]), int(row[1])] = True
            bonded[int(row[1]), int(row[0])] = True
        for a in range(n):
            for b in range(a + 1, n):
                labels.append(int(bonded[a, b]))
                scores.append(float(e[a, b, 1:].sum() - e[a, b, 0]))
    auc = bond_auc(np.array(labels), np.array(scores))
    print(f"bond ranking gate: held-out AUC {auc:.3f} (bar 0.8) over "
          f"{len(labels)} pairs")
    assert auc > 0.8


# ---------------------------------------------------------------------------
# gate 8: ensemble metric equals the literal double loop, exactly


def test_08_coverage_matching_oracle_exact():
    rng = np.random.default_rng(8)
    refs = [rng.normal(size=(6, 3)) for _ in range(10)]
    gens = [rng.normal(size=(6, 3)) for _ in range(10)]
    for threshold in (0.25, 0.5, 1.0, 2.0):
        rep = cov_mat(refs, gens, threshold)
        table = np.array([[kabsch_rmsd(r, g) for g in gens] for r in refs])
        minima = table.min(axis=1)
        assert rep.coverage == float((minima <= threshold).mean())
        assert rep.matching == float(minima.mean())

    # identical sets: full coverage and zero matching, exactly
    same = [rng.normal(size=(5, 3)) for _ in range(4)]
    rep = cov_mat(same, [c.copy() for c in same], threshold=1e-9)
    assert rep.coverage == 1.0
    assert rep.matching == 0.0
    print("coverage/matching equals the brute-force double loop exactly "
          "(10x10 sets, 4 thresholds; identical sets give 1.0/0.0)")


# ---------------------------------------------------------------------------
# gate 9: bitwise determinism of checkpoints and sampled corpora


def test_09_bitwise_determinism(tmp_path):
    corpus = tmp_path / "corpus.txt"
    assert main(["gen-synthetic", "--n", "16", "--seed", "3",
                 "--out", str(corpus)]) == 0

    tiny = [
        "--set", "model.hidden=8", "--set", "model.edge_hidden=8",
        "--set", "model.layers=1", "--set", "model.attn_layers=1",
        "--set", "model.time_freqs=4", "--set", "model.rbf_count=6",
        "--set", "model.proj_dim=4", "--set", "sde.steps=15",
        "--set", "train.max_steps=10", "--set", "train.batch=4",
    ]
    outs = []
    for rep in ("a", "b"):
        ck = tmp_path / f"model_{rep}.ckpt"
        log = tmp_path / f"loss_{rep}.csv"
        assert main(["pretrain", "--corpus", str(corpus),
                     "--out-checkpoint", str(ck), "--out-losses", str(log),
                     "--seed", "9", *tiny]) == 0
        outs.append((ck.read_bytes(), log.read_bytes()))
    assert outs[0][0] == outs[1][0], "checkpoint bytes differ between runs"
    assert outs[0][1] == outs[1][1], "loss log bytes differ between runs"

    samples = []
    for rep in ("a", "b"):
        out = tmp_path / f"gen_{rep}.txt"
        assert main(["sample-conf", "--corpus", str(corpus),
                     "--checkpoint", str(tmp_path / "model_a.ckpt"),
                     "--out", str(out), "--seed", "4", "--per-mol", "2",
                     *tiny]) == 0
        samples.append(out.read_bytes())
    assert samples[0] == samples[1], "sampled corpus bytes differ between runs"
    print("pretrain and sample-conf are bitwise deterministic in "
          "(config, seed): identical checkpoints, logs and corpora")


# ---------------------------------------------------------------------------
# gate 10: contrastive loss at its two analytic anchors


def test_10_contrastive_loss_anchors():
    rng = np.random.default_rng(10)
    zeros = ad.constant(np.zeros((4, 3)))
    loss = ebm_nce_loss(zeros, zeros, rng)
    err = abs(loss.item() - 2.0 * np.log(2.0))
    assert err <= 1e-12

    z = ad.constant(np.array([[20.0, 0.0], [-20.0, 0.0]]))
    saturated = ebm_nce_loss(z, z, np.random.default_rng(11)).item()
    assert saturated < 1e-6
    print(f"contrastive anchors: zero logits give 2 ln 2 (error {err:.1e}), "
          f"separated logits give {saturated:.2e}")
