"""Training objectives: hinge adversarial losses, the R1 penalty on
discriminator-head inputs, and the teacher-distillation loss.

Each loss has a graph-builder form (used by the training loops, returns a
Ref) and, where useful for direct checks, a numpy form. The distillation
target is produced by re-diffusing the student output and denoising it with
the frozen teacher; the re-diffused input sits behind a stop-gradient, so
the only gradient path is the direct student-output argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Ref
from .diffusion import NoiseSchedule, eps_to_x0_batch

__all__ = [
    "DistillWeighting",
    "adv_loss_G",
    "adv_loss_D",
    "adv_loss_g_ref",
    "adv_loss_d_ref",
    "r1_penalty",
    "r1_penalty_ref",
    "distill_loss_ref",
    "teacher_target",
    "total_loss",
]

WEIGHTING_KINDS = ("exponential", "sds", "uniform")


@dataclass(frozen=True)
class DistillWeighting:
    """Per-timestep scaling c(t) of the distillation distance.

    exponential: c(t) = alpha_t (high noise contributes less).
    sds: c(t) = alpha_t / (2 sigma_t) * w(t); with this choice the loss
         gradient coincides with score distillation. w defaults to ones.
    uniform: c(t) = 1; a neutral control, not one of the studied schedules.
    """

    kind: str
    w: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "nfsd":
            raise ValueError(
                "weighting 'nfsd' is not supported: it needs an external "
                "guidance decomposition; use 'exponential', 'sds', or 'uniform'"
            )
        if self.kind not in WEIGHTING_KINDS:
            raise ValueError(f"unknown weighting {self.kind!r}; options: {WEIGHTING_KINDS}")

    def c(self, t, sched: NoiseSchedule) -> np.ndarray:
        t = np.asarray(t)
        if self.kind == "exponential":
            out = sched.alpha[t]
        elif self.kind == "sds":
            w = np.ones(sched.T + 1) if self.w is None else self.w
            out = sched.alpha[t] / (2.0 * sched.sigma[t]) * w[t]
        else:
            out = np.ones(t.shape)
        if np.any(out <= 0):
            raise ValueError("weighting must be positive on the distillation range")
        return out


# -- adversarial (generator side) ------------------------------------------------


def adv_loss_G(head_scores: np.ndarray) -> float:
    """Negative mean over the batch of summed per-head scores, shape (B, K)."""
    scores = np.asarray(head_scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("empty score batch")
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite discriminator scores")
    return float(-np.mean(np.sum(scores, axis=1)))


def adv_loss_g_ref(g: Graph, fake_score_refs: list[Ref]) -> Ref:
    batch = fake_score_refs[0].shape[0]
    stacked = g.concat(fake_score_refs, axis=1)
    return g.scale(g.sum(stacked), -1.0 / batch)


# -- adversarial (discriminator side) ---------------------------------------------


def adv_loss_D(real_scores, fake_scores, r1_term: float, gamma: float) -> float:
    """Hinge loss on real/fake head scores plus the gamma-scaled R1 term."""
    real = np.asarray(real_scores, dtype=np.float64)
    fake = np.asarray(fake_scores, dtype=np.float64)
    if real.size == 0 or fake.size == 0:
        raise ValueError("empty score batch")
    if not (np.all(np.isfinite(real)) and np.all(np.isfinite(fake)) and np.isfinite(r1_term)):
        raise ValueError("non-finite discriminator loss inputs")
    real_term = float(np.mean(np.sum(np.maximum(0.0, 1.0 - real), axis=1)))
    fake_term = float(np.mean(np.sum(np.maximum(0.0, 1.0 + fake), axis=1)))
    return real_term + gamma * r1_term + fake_term


def adv_loss_d_ref(
    g: Graph,
    real_score_refs: list[Ref],
    fake_score_refs: list[Ref],
    r1_ref: Ref | None,
    gamma: float,
):
    """Returns (total_ref, real_term_ref, fake_term_ref)."""
    batch = real_score_refs[0].shape[0]
    real = g.concat(real_score_refs, axis=1)
    fake = g.concat(fake_score_refs, axis=1)
    real_term = g.scale(g.sum(g.relu(g.shift(g.scale(real, -1.0), 1.0))), 1.0 / batch)
    fake_term = g.scale(g.sum(g.relu(g.shift(fake, 1.0))), 1.0 / fake.shape[0])
    total = g.add(real_term, fake_term)
    if r1_ref is not None and gamma != 0.0:
        total = g.add(total, g.scale(r1_ref, gamma))
    return total, real_term, fake_term


# -- R1 gradient penalty ------------------------------------------------------------


def r1_penalty_ref(g: Graph, score_refs: list[Ref], feat_refs: list[Ref]) -> Ref:
    """Sum over heads of the batch-mean squared gradient norm of the head
    output w.r.t. its input features.

    Head scores are row-wise in the features, so the gradient of the batch
    sum stacks the per-sample gradients; its squared norm over the batch mean
    is the penalty. Built from graph ops, so it is differentiable w.r.t. the
    head parameters.
    """
    if len(score_refs) != len(feat_refs):
        raise ValueError("need one score ref per feature ref")
    total = None
    for score, feat in zip(score_refs, feat_refs):
        batch = feat.shape[0]
        (dfeat,) = g.grad(g.sum(score), [feat])
        term = g.scale(g.sqnorm(dfeat), 1.0 / batch)
        total = term if total is None else g.add(total, term)
    return total


def r1_penalty(bundle, feats: list[np.ndarray], cond=None, cond_mode: str = "none") -> float:
    """Penalty value for a batch of (real-sample) features."""
    g = Graph()
    feat_refs = [g.input(f) for f in feats]
    score_refs = bundle.score_refs(g, feat_refs, cond, cond_mode, trainable=False)
    return float(g.value(r1_penalty_ref(g, score_refs, feat_refs)))


# -- distillation -----------------------------------------------------------------


def teacher_target(
    teacher,
    x_t: np.ndarray,
    t: np.ndarray,
    labels,
    sched: NoiseSchedule,
    m: int = 1,
) -> np.ndarray:
    """Teacher's clean-sample reconstruction of re-diffused student outputs,
    optionally over m consecutive deterministic sub-steps (per-sample t)."""
    if m < 1:
        raise ValueError(f"need m >= 1, got {m}")
    t = np.asarray(t)
    if np.any(t < m):
        raise ValueError(f"cannot take {m} sub-steps from t < m")
    steps = np.round(t[:, None] * (m - np.arange(m + 1))[None, :] / m).astype(int)
    x = x_t
    x0_hat = None
    for k in range(m):
        s_col = steps[:, k]
        if np.any(sched.alpha[s_col] == 0.0):
            raise ValueError("teacher sub-step hit a zero-alpha timestep")
        eps_hat = teacher.predict(x, s_col, labels)
        x0_hat = eps_to_x0_batch(x, eps_hat, s_col, sched)
        s_next = steps[:, k + 1]
        if k < m - 1:
            x = sched.alpha[s_next][:, None] * x0_hat + sched.sigma[s_next][:, None] * eps_hat
    return x0_hat


def distill_loss_ref(
    g: Graph,
    student_x0: Ref,
    teacher,
    t: np.ndarray,
    eps_prime: np.ndarray,
    weighting: DistillWeighting,
    sched: NoiseSchedule,
    t_bounds: tuple,
    labels=None,
    m: int = 1,
) -> Ref:
    """Weighted squared distance between the student output and the teacher's
    reconstruction of its re-diffused version.

    The re-diffusion alpha_t * x_hat + sigma_t * eps' is built in-graph and
    stop-gradiented before the teacher sees it.
    """
    t = np.asarray(t)
    lo, hi = t_bounds
    if np.any(t < lo) or np.any(t > hi):
        raise ValueError(f"distillation timestep outside bounds [{lo}, {hi}]")
    if np.any(sched.alpha[t] == 0.0):
        raise ValueError("distillation timestep has zero alpha")
    batch, dim = student_x0.shape
    a_t = np.broadcast_to(sched.alpha[t][:, None], (batch, dim))
    sig_eps = sched.sigma[t][:, None] * eps_prime
    diffused = g.stop_grad(g.add(g.mul(student_x0, g.const(a_t)), g.const(sig_eps)))
    target = teacher_target(teacher, g.value(diffused), t, labels, sched, m=m)
    c = weighting.c(t, sched)
    sqrt_c = np.broadcast_to(np.sqrt(c)[:, None], (batch, dim))
    diff = g.sub(student_x0, g.const(target))
    return g.scale(g.sqnorm(g.mul(diff, g.const(sqrt_c))), 1.0 / batch)


def total_loss(adv_g: float, distill: float, lam: float) -> float:
    """Overall objective: adversarial generator loss plus weighted distillation."""
    if not (np.isfinite(adv_g) and np.isfinite(distill) and np.isfinite(lam)):
        raise ValueError("non-finite loss terms")
    return float(adv_g + lam * distill)
