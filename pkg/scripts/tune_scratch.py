"""Scratch tuning runs for sizing the default configs (not part of the suite)."""

import sys
import time

import numpy as np

from addlab.datasets import DatasetSpec, make_points
from addlab.diffusion import build_schedule, ancestral_sample
from addlab.inference import SamplePlan, default_plan, sample
from addlab.losses import DistillWeighting
from addlab.metrics import sliced_w2, ffd, cond_accuracy
from addlab.nets import (
    DenoiserNetwork,
    DenoiserSpec,
    DiscriminatorBundle,
    DiscriminatorSpec,
    pretrain_feature_network,
)
from addlab.optim import Adam
from addlab.train import DistillConfig, add_train_step, train_teacher


def distill(teacher, fnet, points, labels, config, quiet=False):
    rng = np.random.default_rng(config.seed)
    sched = config.make_schedule()
    if config.pretrained_init:
        student = teacher.clone(mode="x0")
    else:
        from dataclasses import asdict
        student = DenoiserNetwork.init(DenoiserSpec(**{**asdict(teacher.spec), "mode": "x0"}), rng)
    dspec = DiscriminatorSpec(
        n_heads=fnet.spec.n_hidden, feat_dim=fnet.spec.hidden_dim,
        label_dim=fnet.spec.n_classes, img_dim=fnet.spec.embed_dim,
    )
    bundle = DiscriminatorBundle.init(dspec, fnet, rng)
    opt_g, opt_d = Adam(student.params, lr=config.lr_g), Adam(bundle.params, lr=config.lr_d)
    w, taus = DistillWeighting(config.weighting), config.timestep_set()
    t0 = time.time()
    for step in range(config.iters):
        idx = rng.integers(0, len(points), config.batch_size)
        rep = add_train_step(student, teacher, bundle, (points[idx], labels[idx]), config, rng,
                             sched=sched, opt_g=opt_g, opt_d=opt_d, weighting=w, taus=taus, step=step)
        if not quiet and step % 250 == 0:
            print(f"  step {step}: adv_g={rep.adv_g:+.3f} d_real={rep.adv_d_real:.3f} "
                  f"d_fake={rep.adv_d_fake:.3f} r1={rep.r1:.2f} distill={rep.distill:.4f}")
    if not quiet:
        print(f"  {config.iters} iters in {time.time()-t0:.0f}s")
    return student


def main():
    ds = DatasetSpec("ring_mixture", 8, 10000, 0.1)
    points, labels = make_points(ds, 0)
    train, train_lab = points[:9000], labels[:9000]
    held, held_lab = points[9000:], labels[9000:]
    sched = build_schedule("cosine", 1000, True)

    print("== teacher ==")
    teacher = DenoiserNetwork.init(DenoiserSpec(data_dim=2, n_classes=8), np.random.default_rng(0))
    t0 = time.time()
    train_teacher(teacher, train, train_lab, sched, iters=4000, batch_size=128, seed=0)
    print(f"teacher 4000 iters: {time.time()-t0:.0f}s")
    fnet = pretrain_feature_network(train, train_lab, 8, epochs=30, seed=0)
    print("featnet acc:", fnet.accuracy(held, held_lab))

    rng = np.random.default_rng(3)
    lab_s = held_lab[rng.integers(0, len(held_lab), 2048)]
    t_samp = ancestral_sample(teacher, 50, lab_s, sched, seed=7, batch_size=2048, data_dim=2)
    teacher_w2 = sliced_w2(t_samp, held, 128, seed=5)
    print("teacher 50-step W2:", round(teacher_w2, 4))

    _, fh = fnet.features(held)

    for tag, kw in [
        ("full", {}),
        ("distill-only", {"use_adversarial": False}),
        ("random-init", {"pretrained_init": False}),
        ("cond-none", {"cond_mode": "none"}),
    ]:
        print(f"== distill {tag} ==")
        config = DistillConfig(iters=int(sys.argv[1]) if len(sys.argv) > 1 else 1500,
                               batch_size=128, seed=0, **kw)
        student = distill(teacher, fnet, train, train_lab, config)
        for n in (1, 4):
            plan = default_plan(n, seed=11)
            s = sample(student, plan, lab_s, sched, 2048)
            _, fs = fnet.features(s)
            print(f"  {n}-step: W2={sliced_w2(s, held, 128, seed=5):.4f} "
                  f"FFD={ffd(fs, fh):.4f} acc={cond_accuracy(s, lab_s, fnet):.3f}")


if __name__ == "__main__":
    main()
