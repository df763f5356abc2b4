"""Forward noise schedules and reverse-time sampling.

Two diffusion families over t in [0, 1]:

* ``ve``: variance-exploding, sigma(t) = sigma_min * (sigma_max/sigma_min)^t.
  Mean coefficient is 1; the marginal std is sigma(t).
* ``vp``: variance-preserving with beta(t) = beta_min + t*(beta_max - beta_min).
  Mean coefficient a(t) = exp(-t^2*(beta_max-beta_min)/4 - t*beta_min/2) and
  std sqrt(1 - a(t)^2).

``perturb`` draws from the forward kernel, ``dsm_target`` is the analytic
score of that Gaussian kernel, and ``pc_sample`` runs the reverse SDE with
an Euler-Maruyama predictor interleaved with Langevin corrector steps.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "NoiseSchedule",
    "dsm_target",
    "kernel_at",
    "langevin_corrector",
    "pc_sample",
    "perturb",
    "predictor_step",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Closed-form forward diffusion schedule.

    ``steps`` is the default grid size for reverse-time integration.  The
    drift/diffusion pair (f, g) and the kernel coefficients (a, s) are all
    derived from the variant and its range parameters.
    """

    variant: str = "ve"
    sigma_min: float = 0.01
    sigma_max: float = 10.0
    beta_min: float = 0.1
    beta_max: float = 10.0
    steps: int = 250

    def __post_init__(self):
        if self.variant not in ("ve", "vp"):
            raise ValueError(f"unknown schedule variant '{self.variant}'")
        if self.variant == "ve" and not 0.0 < self.sigma_min < self.sigma_max:
            raise ValueError(
                f"need 0 < sigma_min < sigma_max, got ({self.sigma_min}, {self.sigma_max})"
            )
        if self.variant == "vp" and not 0.0 < self.beta_min < self.beta_max:
            raise ValueError(
                f"need 0 < beta_min < beta_max, got ({self.beta_min}, {self.beta_max})"
            )
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")

    # forward SDE dx = f(x, t) dt + g(t) dw
    def beta(self, t: float) -> float:
        return self.beta_min + t * (self.beta_max - self.beta_min)

    def sigma(self, t: float) -> float:
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** t

    def drift(self, x: np.ndarray, t: float) -> np.ndarray:
        if self.variant == "ve":
            return np.zeros_like(x)
        return -0.5 * self.beta(t) * x

    def g2(self, t: float) -> float:
        """Squared diffusion coefficient g(t)^2."""
        if self.variant == "ve":
            # d[sigma^2(t)]/dt
            return 2.0 * np.log(self.sigma_max / self.sigma_min) * self.sigma(t) ** 2
        return self.beta(t)

    def prior_std(self) -> float:
        return self.sigma_max if self.variant == "ve" else 1.0


def kernel_at(sched: NoiseSchedule, t: float) -> tuple[float, float]:
    """Mean coefficient a(t) and std s(t) of the forward kernel at time t.

    The kernel is x_t | x_0 ~ N(a(t) * x_0, s(t)^2 * I).
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if sched.variant == "ve":
        return 1.0, sched.sigma(t)
    loga = -0.25 * t * t * (sched.beta_max - sched.beta_min) - 0.5 * t * sched.beta_min
    a = float(np.exp(loga))
    return a, float(np.sqrt(max(1.0 - a * a, 0.0)))


def perturb(
    x0: np.ndarray, t: float, sched: NoiseSchedule, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw x_t from the forward kernel; returns (x_t, z) with the raw noise."""
    x0 = np.asarray(x0, dtype=np.float64)
    a, s = kernel_at(sched, t)
    z = rng.standard_normal(x0.shape)
    return a * x0 + s * z, z


def dsm_target(
    x0: np.ndarray, x_t: np.ndarray, t: float, sched: NoiseSchedule
) -> np.ndarray:
    """Score of the forward kernel at x_t: ``(a(t) x0 - x_t) / s(t)^2``.

    This is the regression target for denoising score matching; at t = 0 in
    the vp family the kernel collapses to a point and the score is undefined.
    """
    a, s = kernel_at(sched, t)
    if s == 0.0:
        raise ValueError(f"kernel at t={t} is degenerate (s=0); no score exists")
    x0 = np.asarray(x0, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    if x0.shape != x_t.shape:
        raise ValueError(f"shapes differ: {x0.shape} vs {x_t.shape}")
    return (a * x0 - x_t) / (s * s)


def predictor_step(
    x: np.ndarray,
    score: np.ndarray,
    t: float,
    dt: float,
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """One reverse-time Euler-Maruyama step of size dt (t decreasing).

    x <- x - [f(x, t) - g(t)^2 * score] * dt + g(t) * sqrt(dt) * z
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=np.float64)
    score = np.asarray(score, dtype=np.float64)
    if x.shape != score.shape:
        raise ValueError(f"state/score shapes differ: {x.shape} vs {score.shape}")
    g2 = sched.g2(t)
    z = rng.standard_normal(x.shape)
    return x - (sched.drift(x, t) - g2 * score) * dt + np.sqrt(g2 * dt) * z


def langevin_corrector(
    x: np.ndarray,
    score_fn: Callable[[np.ndarray], np.ndarray],
    eps: float,
    steps: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """``steps`` rounds of x <- x + (eps^2 / 2) * score(x) + eps * z."""
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    half = 0.5 * eps * eps
    for _ in range(steps):
        x = x + half * score_fn(x) + eps * rng.standard_normal(x.shape)
    return x


def pc_sample(
    score_fn: Callable[[np.ndarray, float], np.ndarray],
    sched: NoiseSchedule,
    shape: tuple[int, ...],
    rng: np.random.Generator,
    corrector_steps: int = 1,
    eps: float = 0.01,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Predictor-corrector sampling of the reverse SDE.

    Starts from the prior (N(0, sigma_max^2) for ve, N(0, 1) for vp) and
    walks ``sched.steps`` uniform time steps from t = 1 to t = 0, each one a
    predictor update followed by ``corrector_steps`` Langevin rounds at the
    new time (floored at 1e-3, the same lower edge training uses, so learned
    scores are never queried at a degenerate kernel).  ``project``, when
    given, re-projects the state after every
    update; it is how samplers confine the chain to a subspace (for example
    zero-centroid coordinates).  With ``sched.steps == 0`` the prior sample
    is returned untouched.
    """
    x = sched.prior_std() * rng.standard_normal(shape)
    if project is not None:
        x = project(x)
    n = sched.steps
    if n == 0:
        return x
    dt = 1.0 / n
    for k in range(n):
        t = 1.0 - k * dt
        t_next = t - dt
        x = predictor_step(x, score_fn(x, t), t, dt, sched, rng)
        if project is not None:
            x = project(x)
        if corrector_steps > 0:
            t_cor = max(t_next, 1e-3)
            x = langevin_corrector(
                x, lambda v: score_fn(v, t_cor), eps, corrector_steps, rng
            )
            if project is not None:
                x = project(x)
    return x
