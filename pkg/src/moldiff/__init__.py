"""Score-based diffusion between molecular topologies and 3D conformations.

The package couples two generative directions over molecule pairs: sampling
3D conformations given a 2D topology, and recovering topology given 3D
geometry, each driven by a score network trained with denoising score
matching under a shared noise schedule.  A contrastive objective aligns the
two modality encoders.  Everything runs on a small reverse-mode autodiff
tape over float64 numpy arrays.
"""
from __future__ import annotations

__version__ = "0.1.0"
