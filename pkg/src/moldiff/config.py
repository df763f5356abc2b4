"""Flat key=value run configuration.

A config file holds one ``key = value`` assignment per line; blank lines
and lines starting with ``#`` are skipped.  Every key has a documented
default below; an unknown key is an error, as is a value that does not
parse at the key's type.  Command-line ``--set key=value`` overrides win
over the file, which wins over the defaults.
"""
from __future__ import annotations

from dataclasses import dataclass

from .encoders import ModelConfig
from .geom import RbfSpec
from .sde import NoiseSchedule

__all__ = ["ConfigError", "RunConfig", "DEFAULTS", "load_config"]


class ConfigError(ValueError):
    """Bad config file, unknown key or unparseable value."""


# key -> (default, help)
DEFAULTS: dict[str, tuple[object, str]] = {
    "seed": (0, "base random seed; train/sample commands require an explicit one"),
    "sde.variant": ("ve", "noise family: 've' or 'vp'"),
    "sde.sigma_min": (0.01, "ve: noise std at t=0"),
    "sde.sigma_max": (10.0, "ve: noise std at t=1, also the prior std"),
    "sde.beta_min": (0.1, "vp: noise rate at t=0"),
    "sde.beta_max": (10.0, "vp: noise rate at t=1"),
    "sde.steps": (250, "reverse-time grid size for sampling"),
    "model.hidden": (64, "encoder feature width"),
    "model.layers": (3, "encoder depth (also graph-conv depth of the topology head)"),
    "model.edge_hidden": (64, "pair feature width of the conformation head"),
    "model.attn_layers": (2, "attention depth of the conformation head"),
    "model.time_freqs": (16, "sinusoidal time-embedding frequency count"),
    "model.rbf_count": (16, "radial basis size"),
    "model.rbf_cutoff": (5.0, "radial basis span in angstroms"),
    "model.rbf_gamma": (10.0, "radial basis sharpness"),
    "model.pair_cutoff": (5.0, "neighbor cutoff in angstroms (bonded pairs always kept)"),
    "model.proj_dim": (32, "contrastive projection width"),
    "model.data_std_conf": (1.5, "assumed coordinate scale for score preconditioning"),
    "model.data_std_topo": (0.5, "assumed one-hot scale for score preconditioning"),
    "train.epochs": (10, "passes over the corpus"),
    "train.batch": (16, "molecules per optimization step"),
    "train.lr": (1e-3, "Adam learning rate"),
    "train.alpha1": (1.0, "weight of the contrastive objective"),
    "train.alpha2": (1.0, "weight of the topology-to-conformation objective"),
    "train.alpha3": (1.0, "weight of the geometry-to-topology objective"),
    "train.max_steps": (0, "optimization step cap, 0 means no cap"),
    "mask.ratio": (0.0, "fraction of atoms whose features are masked during training"),
    "sample.corrector_steps": (1, "Langevin rounds per predictor step"),
    "sample.eps": (0.01, "Langevin step size during sampling"),
    "paths.corpus": ("", "default corpus path"),
    "paths.checkpoint": ("", "default checkpoint path"),
    "paths.out": ("", "default output path"),
}


@dataclass
class RunConfig:
    """Typed view of the flat settings."""

    values: dict[str, object]

    def __getitem__(self, key: str):
        return self.values[key]

    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule(
            variant=str(self["sde.variant"]),
            sigma_min=float(self["sde.sigma_min"]),
            sigma_max=float(self["sde.sigma_max"]),
            beta_min=float(self["sde.beta_min"]),
            beta_max=float(self["sde.beta_max"]),
            steps=int(self["sde.steps"]),
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            hidden=int(self["model.hidden"]),
            layers=int(self["model.layers"]),
            edge_hidden=int(self["model.edge_hidden"]),
            attn_layers=int(self["model.attn_layers"]),
            time_freqs=int(self["model.time_freqs"]),
            rbf=RbfSpec(
                count=int(self["model.rbf_count"]),
                cutoff=float(self["model.rbf_cutoff"]),
                gamma=float(self["model.rbf_gamma"]),
            ),
            pair_cutoff=float(self["model.pair_cutoff"]),
            proj_dim=int(self["model.proj_dim"]),
            data_std_conf=float(self["model.data_std_conf"]),
            data_std_topo=float(self["model.data_std_topo"]),
        )


def _coerce(key: str, text: str) -> object:
    default = DEFAULTS[key][0]
    try:
        if isinstance(default, bool):
            raise AssertionError("no boolean keys defined")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(
            f"config key '{key}': cannot parse {text!r} as {type(default).__name__}"
        ) from exc


def load_config(
    path=None, overrides: dict[str, str] | None = None
) -> RunConfig:
    """Defaults, overlaid with a config file, overlaid with overrides.

    Raises :class:`ConfigError` for an unknown key anywhere or a malformed
    line in the file (reported with its line number).
    """
    values = {key: default for key, (default, _) in DEFAULTS.items()}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ConfigError(
                        f"{path}:{lineno}: expected 'key = value', got {stripped!r}"
                    )
                key, _, raw = stripped.partition("=")
                key = key.strip()
                if key not in DEFAULTS:
                    raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
                values[key] = _coerce(key, raw.strip())
    for key, raw in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key '{key}'")
        values[key] = _coerce(key, raw)
    return RunConfig(values)
