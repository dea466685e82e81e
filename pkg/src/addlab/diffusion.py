"""Noise schedules, the forward process, and teacher-side samplers.

Schedules are variance preserving: x_s = alpha[s] * x0 + sigma[s] * eps with
alpha^2 + sigma^2 = 1. Index 0 is the clean-data convention (alpha=1, sigma=0).
Zero-terminal schedules rescale alpha so alpha[T] == 0 exactly while alpha[1]
is preserved, making pure noise a valid start state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NoiseSchedule",
    "TimestepSet",
    "SingularTimestepError",
    "build_schedule",
    "forward_diffuse",
    "forward_diffuse_batch",
    "eps_to_x0",
    "eps_to_x0_batch",
    "teacher_ddim_steps",
    "ancestral_sample",
    "dump_schedule_csv",
]


class SingularTimestepError(Exception):
    """Raised when a conversion needs alpha > 0 at a zero-alpha timestep."""


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    T: int
    alpha: np.ndarray  # (T+1,), alpha[0] == 1
    sigma: np.ndarray  # (T+1,), sigma[0] == 0
    zero_terminal: bool

    def __post_init__(self):
        vp = np.abs(self.alpha**2 + self.sigma**2 - 1.0)
        if vp.max() >= 1e-12:
            raise ValueError(f"variance-preserving identity violated: max dev {vp.max():.3e}")
        if np.any(np.diff(self.alpha) >= 0):
            raise ValueError("alpha must be strictly decreasing")
        if self.zero_terminal and (self.alpha[self.T] != 0.0 or self.sigma[self.T] != 1.0):
            raise ValueError("zero-terminal schedule must have alpha[T]=0, sigma[T]=1 exactly")

    @property
    def last_positive(self) -> int:
        """Largest timestep with alpha > 0."""
        return self.T - 1 if self.zero_terminal else self.T


@dataclass(frozen=True)
class TimestepSet:
    """Student timesteps. The largest must equal T so inference can start
    from pure noise."""

    taus: tuple
    T: int

    def __post_init__(self):
        taus = self.taus
        if len(taus) < 1:
            raise ValueError("need at least one student timestep")
        if any(t2 <= t1 for t1, t2 in zip(taus, taus[1:])):
            raise ValueError(f"timesteps must be strictly increasing: {taus}")
        if taus[0] < 1 or taus[-1] != self.T:
            raise ValueError(f"timesteps must lie in [1, T] with max == T={self.T}: {taus}")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n uniform draws from the set."""
        return np.asarray(self.taus)[rng.integers(0, len(self.taus), size=n)]


def build_schedule(kind: str, T: int = 1000, zero_terminal: bool = True) -> NoiseSchedule:
    """Construct a cosine or linear variance-preserving schedule."""
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    s = np.arange(T + 1, dtype=np.float64)
    if kind == "cosine":
        f = np.cos((s / T + 0.008) / 1.008 * np.pi / 2.0) ** 2
        abar = f / f[0]
        alpha = np.sqrt(np.clip(abar, 0.0, 1.0))
    elif kind == "linear":
        betas = np.linspace(1e-4, 2e-2, T)
        abar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        alpha = np.sqrt(abar)
    else:
        raise ValueError(f"unknown schedule kind {kind!r} (use 'cosine' or 'linear')")
    if zero_terminal:
        # Shift/scale so alpha[T] == 0 exactly with alpha[1] preserved; the
        # s=0 convention entry stays pinned at exactly 1.
        a1, aT = alpha[1], alpha[T]
        alpha[1:] = (alpha[1:] - aT) * a1 / (a1 - aT)
        alpha[T] = 0.0
    alpha[0] = 1.0
    sigma = np.sqrt(1.0 - alpha**2)
    return NoiseSchedule(kind=kind, T=T, alpha=alpha, sigma=sigma, zero_terminal=zero_terminal)


def forward_diffuse(x0: np.ndarray, s: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """x_s = alpha_s * x0 + sigma_s * eps."""
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    if not 0 <= s <= sched.T:
        raise ValueError(f"timestep {s} outside [0, {sched.T}]")
    return sched.alpha[s] * x0 + sched.sigma[s] * eps


def forward_diffuse_batch(
    x0: np.ndarray, s: np.ndarray, eps: np.ndarray, sched: NoiseSchedule
) -> np.ndarray:
    """Row-wise forward diffusion with a per-sample timestep array."""
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    s = np.asarray(s)
    return sched.alpha[s][:, None] * x0 + sched.sigma[s][:, None] * eps


def eps_to_x0(x_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Invert the forward process: x0_hat = (x_t - sigma_t * eps_hat) / alpha_t."""
    a = sched.alpha[t]
    if a == 0.0:
        raise SingularTimestepError(f"alpha is zero at t={t}; eps-to-x0 conversion undefined")
    return (x_t - sched.sigma[t] * eps_hat) / a


def eps_to_x0_batch(
    x_t: np.ndarray, eps_hat: np.ndarray, t: np.ndarray, sched: NoiseSchedule
) -> np.ndarray:
    t = np.asarray(t)
    a = sched.alpha[t]
    if np.any(a == 0.0):
        raise SingularTimestepError("alpha is zero at some requested timestep")
    return (x_t - sched.sigma[t][:, None] * eps_hat) / a[:, None]


def teacher_ddim_steps(net, x_t: np.ndarray, t: int, m: int, cond, sched: NoiseSchedule) -> np.ndarray:
    """Denoise x_t with m deterministic sub-steps, evenly spaced toward 0.

    Returns the final clean-sample estimate. m=1 is a single eps-to-x0
    conversion of the teacher prediction.
    """
    if m < 1:
        raise ValueError(f"need m >= 1, got {m}")
    if t < m:
        raise ValueError(f"cannot take {m} distinct sub-steps from t={t}")
    steps = [round(t * (m - k) / m) for k in range(m + 1)]
    for s in steps[:-1]:
        if s < 1 or sched.alpha[s] == 0.0:
            raise SingularTimestepError(f"sub-step visits singular timestep s={s}")
    x = x_t
    x0_hat = None
    for k in range(m):
        s, s_next = steps[k], steps[k + 1]
        eps_hat = net.predict(x, np.full(len(x), s), cond)
        x0_hat = eps_to_x0(x, eps_hat, s, sched)
        if s_next > 0:
            x = sched.alpha[s_next] * x0_hat + sched.sigma[s_next] * eps_hat
    return x0_hat


def ancestral_sample(
    net,
    n_steps: int,
    cond,
    sched: NoiseSchedule,
    seed: int,
    batch_size: int = 256,
    data_dim: int = 2,
) -> np.ndarray:
    """Iterative stochastic denoising from standard-normal noise.

    Uses the variance-preserving transition with full posterior noise
    (eta=1) over an evenly spaced descending timestep grid.
    """
    if n_steps < 1:
        raise ValueError(f"need n_steps >= 1, got {n_steps}")
    rng = np.random.default_rng(seed)
    s_max = sched.last_positive
    grid = np.unique(np.round(np.linspace(0, s_max, n_steps + 1)).astype(int))[::-1]
    x = rng.standard_normal((batch_size, data_dim))
    x0_hat = x
    for k in range(len(grid) - 1):
        s, s_next = int(grid[k]), int(grid[k + 1])
        eps_hat = net.predict(x, np.full(batch_size, s), cond)
        x0_hat = eps_to_x0(x, eps_hat, s, sched)
        if s_next == 0:
            x = x0_hat
            continue
        a_s, a_n = sched.alpha[s], sched.alpha[s_next]
        sg_s, sg_n = sched.sigma[s], sched.sigma[s_next]
        sigma_tilde = (sg_n / sg_s) * np.sqrt(max(0.0, 1.0 - (a_s / a_n) ** 2))
        dir_coef = np.sqrt(max(0.0, sg_n**2 - sigma_tilde**2))
        z = rng.standard_normal(x.shape)
        x = a_n * x0_hat + dir_coef * eps_hat + sigma_tilde * z
    return x


def dump_schedule_csv(sched: NoiseSchedule, path) -> None:
    """Write s, alpha, sigma rows for inspection or plotting."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["s", "alpha", "sigma"])
        for s in range(sched.T + 1):
            w.writerow([s, repr(float(sched.alpha[s])), repr(float(sched.sigma[s]))])
