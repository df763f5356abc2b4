"""Command-line entry points.

Commands: ``gen-synthetic`` (toy corpus), ``pretrain`` (joint training),
``sample-conf`` (conformations for topologies), ``sample-topo`` (topologies
for geometries), ``eval-covmat`` (coverage/matching of conformer sets) and
``check`` (randomized symmetry audit plus a gradient audit).  Exit codes:
0 success, 1 runtime failure, 2 usage or validation failure.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import autodiff as ad
from .config import ConfigError, RunConfig, load_config
from .metrics import cov_mat
from .model import Model
from .moldata import Molecule3D, MoleculePair, ValidationError, read_corpus, write_corpus
from .sampling import sample_conformation, sample_topology
from .scorenets import check_symmetry
from .synthetic import gen_synthetic

__all__ = ["main"]


class UsageError(ValueError):
    """Bad invocation or bad input files; maps to exit code 2."""


def _parse_overrides(items: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, val = item.partition("=")
        out[key.strip()] = val.strip()
    return out


def _load(args) -> RunConfig:
    path = getattr(args, "config", None)
    return load_config(path, _parse_overrides(getattr(args, "set", []) or []))


def _read_corpus_checked(path) -> list[MoleculePair]:
    try:
        return read_corpus(path)
    except FileNotFoundError as exc:
        raise UsageError(f"corpus file not found: {path}") from exc


def _build_model(cfg: RunConfig, seed: int, checkpoint=None) -> Model:
    model = Model.init(cfg.model_config(), cfg.schedule(), seed)
    if checkpoint:
        try:
            model.load_params(checkpoint)
        except FileNotFoundError as exc:
            raise UsageError(f"checkpoint not found: {checkpoint}") from exc
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    return model


def cmd_gen_synthetic(args) -> int:
    pairs = gen_synthetic(args.n, args.seed)
    write_corpus(args.out, pairs)
    print(f"wrote {len(pairs)} molecules to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    from .moldata import MaskSpec
    from .objectives import LossWeights, train

    cfg = _load(args)
    pairs = _read_corpus_checked(args.corpus)
    model = _build_model(cfg, args.seed, args.init_checkpoint)
    weights = LossWeights(
        contrastive=float(cfg["train.alpha1"]),
        gen_2d3d=float(cfg["train.alpha2"]),
        gen_3d2d=float(cfg["train.alpha3"]),
    )
    if not weights.any_active():
        raise UsageError("all loss weights are zero; nothing to train")
    ratio = float(cfg["mask.ratio"])
    mask = MaskSpec(ratio, 0) if ratio > 0.0 else None
    cap = int(cfg["train.max_steps"]) or None
    history = train(
        pairs,
        model,
        epochs=int(cfg["train.epochs"]),
        batch_size=int(cfg["train.batch"]),
        lr=float(cfg["train.lr"]),
        weights=weights,
        seed=args.seed,
        mask=mask,
        max_steps=cap,
    )
    model.save(args.out_checkpoint)
    if args.out_losses:
        with open(args.out_losses, "w", encoding="utf-8") as fh:
            fh.write("epoch,loss_total,loss_contrastive,loss_2d3d,loss_3d2d\n")
            for row in history:
                fh.write(
                    f"{int(row['epoch'])},{row['total']:.10g},"
                    f"{row['contrastive']:.10g},{row['gen_2d3d']:.10g},"
                    f"{row['gen_3d2d']:.10g}\n"
                )
    last = history[-1] if history else {"total": float("nan")}
    print(
        f"trained {len(history)} epochs on {len(pairs)} molecules; "
        f"final loss {last['total']:.6g}; checkpoint {args.out_checkpoint}"
    )
    return 0


def cmd_sample_conf(args) -> int:
    cfg = _load(args)
    pairs = _read_corpus_checked(args.corpus)
    model = _build_model(cfg, args.seed, args.checkpoint)
    out: list[MoleculePair] = []
    for index, pair in enumerate(pairs):
        for rep in range(args.per_mol):
            rng = np.random.default_rng(
                np.random.SeedSequence((args.seed, index, rep))
            )
            coords = sample_conformation(
                model,
                pair.topo,
                rng,
                corrector_steps=int(cfg["sample.corrector_steps"]),
                eps=float(cfg["sample.eps"]),
            )
            out.append(
                MoleculePair(
                    pair.topo, Molecule3D(pair.topo.atoms[:, 0].copy(), coords)
                )
            )
    write_corpus(args.out, out)
    print(f"sampled {len(out)} conformations to {args.out}")
    return 0


def cmd_sample_topo(args) -> int:
    cfg = _load(args)
    pairs = _read_corpus_checked(args.corpus)
    model = _build_model(cfg, args.seed, args.checkpoint)
    out: list[MoleculePair] = []
    for index, pair in enumerate(pairs):
        rng = np.random.default_rng(np.random.SeedSequence((args.seed, index)))
        sampled, _, _ = sample_topology(
            model,
            pair.geom,
            rng,
            corrector_steps=int(cfg["sample.corrector_steps"]),
            eps=float(cfg["sample.eps"]),
        )
        out.append(sampled)
    write_corpus(args.out, out)
    print(f"sampled {len(out)} topologies to {args.out}")
    return 0


def cmd_eval_covmat(args) -> int:
    refs = _read_corpus_checked(args.references)
    gens = _read_corpus_checked(args.generated)
    k = args.per_mol
    if len(gens) != len(refs) * k:
        raise UsageError(
            f"generated corpus has {len(gens)} records, expected "
            f"{len(refs)} references x {k} per molecule"
        )
    coverages, matchings = [], []
    for i, ref in enumerate(refs):
        chunk = gens[i * k : (i + 1) * k]
        for g in chunk:
            if g.n_atoms != ref.n_atoms:
                raise UsageError(
                    f"molecule {i}: generated atom count {g.n_atoms} "
                    f"!= reference {ref.n_atoms}"
                )
        report = cov_mat(
            [ref.geom.coords], [g.geom.coords for g in chunk], args.delta
        )
        coverages.append(report.coverage)
        matchings.append(report.matching)
    agg = np.median if args.aggregate == "median" else np.mean
    payload = {
        "coverage": float(agg(np.array(coverages))),
        "matching": float(agg(np.array(matchings))),
        "threshold": args.delta,
        "aggregate": args.aggregate,
        "n_molecules": len(refs),
        "per_molecule": [
            {"coverage": c, "matching": m} for c, m in zip(coverages, matchings)
        ],
    }
    text = json.dumps(payload, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def cmd_check(args) -> int:
    cfg = _load(args)
    model = _build_model(cfg, args.seed, args.checkpoint)
    checks = [
        ("conf", "rotation"),
        ("conf", "reflection"),
        ("conf", "translation"),
        ("conf", "permutation"),
        ("topo", "rotation"),
        ("topo", "translation"),
        ("topo", "permutation"),
    ]
    ok = True
    for net, kind in checks:
        rep = check_symmetry(
            kind, net, model.params, model.cfg, model.sched, args.trials, seed=args.seed
        )
        ok &= rep.passed
        print(
            f"{'PASS' if rep.passed else 'FAIL'} {net}/{kind}: "
            f"max deviation {rep.max_deviation:.3e}"
            + (
                f", fraction breaking mirror {rep.fraction_exceeding:.2f}"
                if kind == "reflection"
                else ""
            )
        )
    # negative control: with the cross-product axis muted the conf net must
    # become mirror-symmetric, so the reflection check has to fail
    control = check_symmetry(
        "reflection",
        "conf",
        model.params,
        model.cfg,
        model.sched,
        args.trials,
        seed=args.seed,
        drop_pseudo_axis=True,
    )
    ok &= not control.passed
    print(
        f"{'PASS' if not control.passed else 'FAIL'} conf/reflection-control: "
        f"muted pseudo-axis leaves max relative deviation {control.max_deviation:.3e}"
    )
    # gradient audit: reverse mode against central differences on small
    # graphs that exercise the op set
    rng = np.random.default_rng(np.random.SeedSequence((args.seed, 0x6D)))
    worst = 0.0
    for _ in range(5):
        arrs = [
            rng.standard_normal((4, 3)),
            rng.standard_normal((3, 4)),
            rng.standard_normal(4),
        ]

        def graph(leaves):
            x, w, v = leaves
            h = ad.tanh(x @ w)
            s = ad.sigmoid(h) + ad.relu(h) * ad.constant(np.asarray(0.5))
            return ad.mean(s @ ad.reshape(v, (4, 1)))

        worst = max(worst, ad.grad_check(graph, arrs))
    grad_ok = worst < 1e-4
    ok &= grad_ok
    print(
        f"{'PASS' if grad_ok else 'FAIL'} autodiff/gradients: "
        f"max relative error {worst:.3e}"
    )
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="moldiff",
        description="diffusion between molecular topologies and conformations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a deterministic toy corpus")
    p.add_argument("--n", type=int, default=200, help="number of molecules")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_synthetic)

    def common(p, checkpoint_required: bool):
        p.add_argument("--config", default=None, help="flat key=value settings file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--corpus", required=True)
        if checkpoint_required:
            p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("pretrain", help="train on a corpus of molecule pairs")
    common(p, checkpoint_required=False)
    p.add_argument("--init-checkpoint", default=None, help="warm-start parameters")
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--out-losses", default=None, help="per-epoch loss CSV")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("sample-conf", help="sample conformations for topologies")
    common(p, checkpoint_required=True)
    p.add_argument("--per-mol", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample_conf)

    p = sub.add_parser("sample-topo", help="sample topologies for geometries")
    common(p, checkpoint_required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample_topo)

    p = sub.add_parser("eval-covmat", help="coverage/matching of conformer sets")
    p.add_argument("--references", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--delta", type=float, default=0.5, help="coverage threshold")
    p.add_argument("--per-mol", type=int, default=1)
    p.add_argument("--aggregate", choices=("mean", "median"), default="mean")
    p.add_argument("--out", default=None, help="also write the JSON report here")
    p.set_defaults(fn=cmd_eval_covmat)

    p = sub.add_parser("check", help="randomized symmetry audit of the networks")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--trials", type=int, default=50)
    p.set_defaults(fn=cmd_check)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # anything else is a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
