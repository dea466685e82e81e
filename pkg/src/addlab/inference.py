"""Few-step student sampling with iterative refinement.

Each step predicts a clean sample at the current timestep; between steps the
prediction is re-diffused to the next (lower) timestep. The first timestep
must be the terminal one, so sampling starts from pure noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import serialize
from .diffusion import NoiseSchedule, forward_diffuse_batch

__all__ = ["SamplePlan", "default_plan", "sample", "sample_grid"]


@dataclass(frozen=True)
class SamplePlan:
    steps: tuple
    stochastic_renoise: bool = True
    seed: int = 0

    def __post_init__(self):
        if len(self.steps) < 1:
            raise ValueError("plan needs at least one step")
        if any(b >= a for a, b in zip(self.steps, self.steps[1:])):
            raise ValueError(f"plan steps must be strictly decreasing: {self.steps}")


def default_plan(n_steps: int, taus=(250, 500, 750, 1000), seed: int = 0) -> SamplePlan:
    """Reuse the training timestep set in reverse: 1 step -> (1000,),
    2 -> (1000, 500), 4 -> (1000, 750, 500, 250)."""
    rev = tuple(sorted(taus, reverse=True))
    if len(rev) % n_steps == 0:
        stride = len(rev) // n_steps
        steps = rev[::stride]
    else:
        idx = np.round(np.linspace(0, len(rev) - 1, n_steps)).astype(int)
        steps = tuple(rev[i] for i in idx)
    return SamplePlan(tuple(steps), seed=seed)


def sample(
    student,
    plan: SamplePlan,
    labels,
    sched: NoiseSchedule,
    batch_size: int = 256,
) -> np.ndarray:
    """Generate a batch with the student's few-step plan.

    Deterministic given the plan seed. Never touches a teacher or
    discriminator.
    """
    if student.spec.mode != "x0":
        raise ValueError("few-step sampling needs an x0-mode student")
    if plan.steps[0] != sched.T:
        raise ValueError(
            f"plan must start at the terminal timestep {sched.T}, got {plan.steps[0]}"
        )
    rng = np.random.default_rng(plan.seed)
    noise = rng.standard_normal((batch_size, student.spec.data_dim))
    x = noise
    x0_hat = x
    for i, tau in enumerate(plan.steps):
        x0_hat = student.predict(x, np.full(batch_size, tau), labels)
        if i + 1 < len(plan.steps):
            eps = rng.standard_normal(x.shape) if plan.stochastic_renoise else noise
            x = forward_diffuse_batch(x0_hat, np.full(batch_size, plan.steps[i + 1]), eps, sched)
    return x0_hat


def sample_grid(
    student,
    n_steps_list,
    conds: dict,
    seeds,
    sched: NoiseSchedule,
    out_dir,
    batch_size: int = 256,
    taus=(250, 500, 750, 1000),
) -> dict:
    """Sample batches over (n_steps, cond, seed) and archive them to disk.

    conds maps a condition name to a label array (or None). Returns the index
    written alongside the batches.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for n_steps in n_steps_list:
        for cond_name, labels in conds.items():
            for seed in seeds:
                plan = default_plan(n_steps, taus=taus, seed=seed)
                batch = sample(student, plan, labels, sched, batch_size)
                fname = f"batch_s{n_steps}_{cond_name}_seed{seed}.bin"
                serialize.save_tensors(out_dir / fname, {"samples": batch})
                entries.append(
                    {
                        "file": fname,
                        "n_steps": int(n_steps),
                        "cond": cond_name,
                        "seed": int(seed),
                        "plan": [int(t) for t in plan.steps],
                        "batch_size": int(batch_size),
                        "hash": serialize.file_hash(out_dir / fname),
                    }
                )
    index = {"entries": entries}
    (out_dir / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return index
