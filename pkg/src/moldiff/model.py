"""Bundle of architecture config, noise schedule and parameter arrays."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import load_checkpoint, save_checkpoint
from .encoders import ModelConfig, init_params
from .moldata import MaskSpec, Molecule2D, Molecule3D
from .scorenets import conf_score, topo_scores
from .sde import NoiseSchedule

__all__ = ["Model"]


@dataclass
class Model:
    """Everything needed to score, sample and train."""

    cfg: ModelConfig
    sched: NoiseSchedule
    params: dict[str, np.ndarray]

    @classmethod
    def init(cls, cfg: ModelConfig, sched: NoiseSchedule, seed: int) -> "Model":
        return cls(cfg, sched, init_params(cfg, seed))

    def tensors(self, track: bool = True) -> dict[str, ad.Tensor]:
        """Parameter arrays wrapped for the tape; tracked for training,
        untracked (cheap) for sampling."""
        wrap = ad.parameter if track else ad.constant
        return {k: wrap(v) for k, v in self.params.items()}

    def conf_score_np(
        self,
        topo: Molecule2D,
        coords: np.ndarray,
        t: float,
        mask: MaskSpec | None = None,
    ) -> np.ndarray:
        """Conformation score as a plain array (no gradient graph)."""
        return conf_score(
            topo, coords, t, self.tensors(track=False), self.cfg, self.sched, mask
        ).value

    def topo_scores_np(
        self,
        x_t: np.ndarray,
        e_t: np.ndarray,
        geom: Molecule3D,
        t: float,
        mask: MaskSpec | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        sx, se = topo_scores(
            x_t, e_t, geom, t, self.tensors(track=False), self.cfg, self.sched, mask
        )
        return sx.value, se.value

    def save(self, path) -> None:
        save_checkpoint(path, self.params)

    def load_params(self, path) -> None:
        """Replace parameters from a checkpoint; every name and shape must
        match the architecture built from the config."""
        loaded = load_checkpoint(path)
        if set(loaded) != set(self.params):
            missing = sorted(set(self.params) - set(loaded))
            extra = sorted(set(loaded) - set(self.params))
            raise ValueError(
                f"checkpoint does not match the model: missing {missing[:3]}, unexpected {extra[:3]}"
            )
        for name, arr in loaded.items():
            if arr.shape != self.params[name].shape:
                raise ValueError(
                    f"checkpoint entry '{name}' has shape {arr.shape}, "
                    f"model expects {self.params[name].shape}"
                )
        self.params = loaded
