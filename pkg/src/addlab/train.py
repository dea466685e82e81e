"""Training loops: teacher denoising pretraining and the hybrid
adversarial + distillation student objective.

Each ADD iteration takes one discriminator step followed by one generator
step, with separate optimizers. The teacher and feature network enter every
graph as constants, so they cannot receive gradients or drift.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .autodiff import Graph
from .diffusion import NoiseSchedule, TimestepSet, build_schedule, forward_diffuse_batch
from .losses import (
    DistillWeighting,
    adv_loss_d_ref,
    adv_loss_g_ref,
    distill_loss_ref,
    r1_penalty_ref,
)
from .nets import (
    DenoiserNetwork,
    DiscriminatorBundle,
    DiscriminatorSpec,
    FeatureNetwork,
    make_conditioning,
    save_net,
    load_denoiser,
    load_feature_network,
)
from .optim import Adam, clip_grad_norm

__all__ = [
    "DistillConfig",
    "LossReport",
    "TrainingDiverged",
    "train_teacher",
    "add_train_step",
    "run_distillation",
    "config_hash",
]

LOSS_COLUMNS = ("step", "adv_g", "adv_d_real", "adv_d_fake", "r1", "distill", "total")

COND_MODES = ("none", "label", "image", "label+image")


class TrainingDiverged(Exception):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass
class DistillConfig:
    lam: float = 2.5
    gamma: float = 1e-5
    weighting: str = "exponential"
    student_taus: tuple = (250, 500, 750, 1000)
    teacher_steps: int = 1
    cond_mode: str = "label+image"
    distill_t_min: int = 20
    distill_t_max: int = 980
    batch_size: int = 128
    lr_g: float = 1e-4
    lr_d: float = 2e-4
    iters: int = 2000
    seed: int = 0
    grad_clip: float = 1.0  # 0 disables clipping
    use_adversarial: bool = True
    pretrained_init: bool = True
    eval_every: int = 500
    schedule: str = "cosine"
    T: int = 1000

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("lambda and gamma must be non-negative")
        if self.teacher_steps < 1:
            raise ValueError("teacher_steps must be >= 1")
        if self.cond_mode not in COND_MODES:
            raise ValueError(f"cond_mode must be one of {COND_MODES}")
        DistillWeighting(self.weighting)  # rejects unknown/unsupported kinds
        if not (0 < self.distill_t_min <= self.distill_t_max < self.T):
            raise ValueError("distillation bounds must satisfy 0 < t_min <= t_max < T")
        self.student_taus = tuple(int(t) for t in self.student_taus)

    def timestep_set(self) -> TimestepSet:
        return TimestepSet(self.student_taus, self.T)

    def make_schedule(self) -> NoiseSchedule:
        sched = build_schedule(self.schedule, self.T, zero_terminal=True)
        if sched.alpha[self.distill_t_max] == 0.0:
            raise ValueError("distill_t_max hits a zero-alpha timestep")
        return sched


@dataclass(frozen=True)
class LossReport:
    step: int
    adv_g: float
    adv_d_real: float
    adv_d_fake: float
    r1: float
    distill: float
    total: float

    def __post_init__(self):
        vals = (self.adv_g, self.adv_d_real, self.adv_d_fake, self.r1, self.distill, self.total)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"non-finite loss at step {self.step}")


def config_hash(config) -> str:
    """Stable hash of a config dataclass or dict."""
    data = asdict(config) if hasattr(config, "__dataclass_fields__") else dict(config)
    blob = json.dumps(data, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _param_grads(raw: dict, prefix: str) -> dict:
    """Strip 'prefix/' from backward()'s parameter-grad keys."""
    out = {}
    skip = len(prefix) + 1
    for key, val in raw.items():
        if key.startswith(prefix + "/"):
            out[key[skip:]] = val
    return out


def train_teacher(
    net: DenoiserNetwork,
    points: np.ndarray,
    labels,
    sched: NoiseSchedule,
    iters: int = 4000,
    batch_size: int = 128,
    lr: float = 3e-4,
    seed: int = 0,
    lr_decay: bool = True,
    log=None,
) -> DenoiserNetwork:
    """Standard denoising pretraining of an eps-mode network.

    Timesteps are sampled uniformly over [1, last positive-alpha step]; the
    learning rate follows a cosine decay by default; the returned network is
    marked frozen.
    """
    if net.spec.mode != "eps":
        raise ValueError("teacher pretraining expects an eps-mode network")
    if len(points) == 0:
        raise ValueError("empty training data")
    rng = np.random.default_rng(seed)
    opt = Adam(net.params, lr=lr)
    n = len(points)
    for step in range(iters):
        if lr_decay:
            opt.lr = lr * 0.5 * (1.0 + np.cos(np.pi * step / iters))
        idx = rng.integers(0, n, size=batch_size)
        x0 = points[idx]
        lab = None if labels is None else np.asarray(labels)[idx]
        s = rng.integers(1, sched.last_positive + 1, size=batch_size)
        eps = rng.standard_normal(x0.shape)
        x_s = forward_diffuse_batch(x0, s, eps, sched)
        g = Graph()
        pred = net.build(g, g.input(x_s), s, lab, prefix="teacher", trainable=True)
        loss = g.scale(g.sqnorm(g.sub(pred, g.const(eps))), 1.0 / batch_size)
        loss_val = float(g.value(loss))
        if not np.isfinite(loss_val):
            raise TrainingDiverged(step, "non-finite denoising loss")
        grads = _param_grads(g.backward(np.ones(()), output=loss)["params"], "teacher")
        opt.step(grads)
        if log is not None and step % 200 == 0:
            log(step, loss_val)
    net.frozen = True
    return net


def denoising_loss(net: DenoiserNetwork, points, labels, sched, seed=0, batch_size=1024) -> float:
    """Monte-Carlo denoising loss of an eps-mode net on held-out data."""
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(points), size=batch_size)
    x0 = points[idx]
    lab = None if labels is None else np.asarray(labels)[idx]
    s = rng.integers(1, sched.last_positive + 1, size=batch_size)
    eps = rng.standard_normal(x0.shape)
    x_s = forward_diffuse_batch(x0, s, eps, sched)
    pred = net.predict(x_s, s, lab)
    return float(np.sum((pred - eps) ** 2) / batch_size)


def add_train_step(
    student: DenoiserNetwork,
    teacher: DenoiserNetwork,
    bundle: DiscriminatorBundle,
    real_batch: tuple,
    config: DistillConfig,
    rng: np.random.Generator,
    *,
    sched: NoiseSchedule,
    opt_g: Adam,
    opt_d: Adam,
    weighting: DistillWeighting,
    taus: TimestepSet,
    step: int = 0,
) -> LossReport:
    """One discriminator step, then one generator step.

    Student inputs are real data diffused to a drawn student timestep; at the
    terminal timestep of the zero-terminal schedule the input is exactly the
    drawn noise.
    """
    x0, labels = real_batch
    batch = len(x0)
    featnet = bundle.featnet
    n_classes = featnet.spec.n_classes

    s = taus.draw(rng, batch)
    eps = rng.standard_normal(x0.shape)
    x_s = forward_diffuse_batch(x0, s, eps, sched)
    cond = make_conditioning(labels, x0, featnet, n_classes)

    adv_g_val = 0.0
    d_real_val = d_fake_val = r1_val = 0.0

    if config.use_adversarial:
        # Discriminator step: heads trainable, student output as plain data.
        fake_x0 = student.predict(x_s, s, labels)
        feats_real, _ = featnet.features(x0)
        feats_fake, _ = featnet.features(fake_x0)
        g = Graph()
        real_refs = [g.input(f) for f in feats_real]
        fake_refs = [g.input(f) for f in feats_fake]
        refs = bundle.bind(g, trainable=True)
        real_scores = bundle.score_with_refs(g, refs, real_refs, cond, config.cond_mode)
        fake_scores = bundle.score_with_refs(g, refs, fake_refs, cond, config.cond_mode)
        r1_ref = r1_penalty_ref(g, real_scores, real_refs)
        d_loss, real_term, fake_term = adv_loss_d_ref(
            g, real_scores, fake_scores, r1_ref, config.gamma
        )
        d_real_val = float(g.value(real_term))
        fake_loss_val = float(g.value(fake_term))
        r1_val = float(g.value(r1_ref))
        grads = _param_grads(g.backward(np.ones(()), output=d_loss)["params"], "disc")
        if config.grad_clip:
            clip_grad_norm(grads, config.grad_clip)
        opt_d.step(grads)
        d_fake_val = fake_loss_val

    # Generator step.
    g = Graph()
    x_ref = g.input(x_s)
    xhat = student.build(g, x_ref, s, labels, prefix="student", trainable=True)
    terms = []
    if config.use_adversarial:
        feats_fake_refs, _ = featnet.build(g, xhat, trainable=False)
        fake_scores = bundle.score_refs(
            g, feats_fake_refs, cond, config.cond_mode, trainable=False
        )
        adv_ref = adv_loss_g_ref(g, fake_scores)
        terms.append(adv_ref)
    t = rng.integers(config.distill_t_min, config.distill_t_max + 1, size=batch)
    eps_prime = rng.standard_normal(x0.shape)
    dist_ref = distill_loss_ref(
        g,
        xhat,
        teacher,
        t,
        eps_prime,
        weighting,
        sched,
        (config.distill_t_min, config.distill_t_max),
        labels,
        m=config.teacher_steps,
    )
    terms.append(g.scale(dist_ref, config.lam))
    g_loss = terms[0]
    for term in terms[1:]:
        g_loss = g.add(g_loss, term)
    if config.use_adversarial:
        adv_g_val = float(g.value(adv_ref))
    distill_val = float(g.value(dist_ref))
    grads = _param_grads(g.backward(np.ones(()), output=g_loss)["params"], "student")
    if config.grad_clip:
        clip_grad_norm(grads, config.grad_clip)
    opt_g.step(grads)

    return LossReport(
        step=step,
        adv_g=adv_g_val,
        adv_d_real=d_real_val,
        adv_d_fake=d_fake_val,
        r1=r1_val,
        distill=distill_val,
        total=adv_g_val + config.lam * distill_val,
    )


@dataclass
class RunPaths:
    teacher: Path
    featnet: Path
    data: Path
    out_dir: Path


def run_distillation(config: DistillConfig, paths: RunPaths, eval_hook=None) -> dict:
    """Full student distillation: load frozen nets, train, checkpoint.

    Writes loss.csv (one row per step), snapshots.csv (periodic quick metric),
    and the student checkpoint + manifest under paths.out_dir. Returns a
    summary dict. Deterministic given config.seed.
    """
    from .datasets import load_dataset

    for p in (paths.teacher, paths.featnet, paths.data):
        if not Path(p).exists():
            raise FileNotFoundError(f"missing input: {p}")
    out_dir = Path(paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    teacher = load_denoiser(paths.teacher)
    teacher.frozen = True
    featnet = load_feature_network(paths.featnet)
    data = load_dataset(paths.data)
    points, labels = data["train_points"], data["train_labels"]
    n_classes = int(data["n_classes"])

    sched = config.make_schedule()
    taus = config.timestep_set()
    weighting = DistillWeighting(config.weighting)
    rng = np.random.default_rng(config.seed)

    if config.pretrained_init:
        student = teacher.clone(mode="x0")
    else:
        student = DenoiserNetwork.init(
            type(teacher.spec)(**{**asdict(teacher.spec), "mode": "x0"}), rng
        )
    dspec = DiscriminatorSpec(
        n_heads=featnet.spec.n_hidden,
        feat_dim=featnet.spec.hidden_dim,
        label_dim=n_classes,
        img_dim=featnet.spec.embed_dim,
    )
    bundle = DiscriminatorBundle.init(dspec, featnet, rng)

    opt_g = Adam(student.params, lr=config.lr_g)
    opt_d = Adam(bundle.params, lr=config.lr_d)

    featnet_before = {k: v.copy() for k, v in featnet.params.items()}
    teacher_before = {k: v.copy() for k, v in teacher.params.items()}

    cfg_hash = config_hash(config)
    (out_dir / "config.json").write_text(
        json.dumps({**asdict(config), "config_hash": cfg_hash}, indent=2, sort_keys=True) + "\n"
    )

    n = len(points)
    snapshots = []
    with open(out_dir / "loss.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(LOSS_COLUMNS)
        for step in range(config.iters):
            idx = rng.integers(0, n, size=config.batch_size)
            report = add_train_step(
                student,
                teacher,
                bundle,
                (points[idx], np.asarray(labels)[idx]),
                config,
                rng,
                sched=sched,
                opt_g=opt_g,
                opt_d=opt_d,
                weighting=weighting,
                taus=taus,
                step=step,
            )
            writer.writerow(
                [step] + [repr(getattr(report, c)) for c in LOSS_COLUMNS[1:]]
            )
            if config.eval_every and (step + 1) % config.eval_every == 0 and eval_hook:
                snapshots.append((step + 1, eval_hook(student)))

    for name in featnet_before:
        if not np.array_equal(featnet.params[name], featnet_before[name]):
            raise RuntimeError("frozen feature network drifted during training")
    for name in teacher_before:
        if not np.array_equal(teacher.params[name], teacher_before[name]):
            raise RuntimeError("frozen teacher drifted during training")

    if snapshots:
        with open(out_dir / "snapshots.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "metric"])
            for step, value in snapshots:
                writer.writerow([step, repr(float(value))])

    student_path = out_dir / "student.bin"
    save_net(
        student_path,
        student,
        manifest_extra={"schedule": config.schedule, "T": config.T, "config_hash": cfg_hash},
    )
    save_net(out_dir / "discriminator.bin", bundle, manifest_extra={"config_hash": cfg_hash})
    return {
        "student": str(student_path),
        "discriminator": str(out_dir / "discriminator.bin"),
        "config_hash": cfg_hash,
    }
