"""Scratch: refinement-rule diagnostics (not part of the suite)."""

import pickle
import sys
import time
from pathlib import Path

import numpy as np

from addlab.datasets import DatasetSpec, make_points
from addlab.diffusion import build_schedule, ancestral_sample
from addlab.inference import SamplePlan, default_plan, sample
from addlab.metrics import sliced_w2, ffd
from addlab.nets import DenoiserNetwork, DenoiserSpec, pretrain_feature_network, save_net, load_denoiser, load_feature_network
from addlab.train import DistillConfig, train_teacher

sys.path.insert(0, "scripts")
from tune_scratch import distill

CACHE = Path("/tmp/addlab_cache")


def get_artifacts():
    CACHE.mkdir(exist_ok=True)
    ds = DatasetSpec("ring_mixture", 8, 20000, 0.1)
    points, labels = make_points(ds, 0)
    train, train_lab = points[:18000], labels[:18000]
    held, held_lab = points[18000:], labels[18000:]
    sched = build_schedule("cosine", 1000, True)
    if not (CACHE / "teacher.bin").exists():
        teacher = DenoiserNetwork.init(DenoiserSpec(data_dim=2, n_classes=8), np.random.default_rng(0))
        train_teacher(teacher, train, train_lab, sched, iters=4000, batch_size=128, seed=0)
        save_net(CACHE / "teacher.bin", teacher, manifest_extra={"schedule": "cosine", "T": 1000})
        fnet = pretrain_feature_network(train, train_lab, 8, epochs=20, seed=0)
        save_net(CACHE / "featnet.bin", fnet)
    teacher = load_denoiser(CACHE / "teacher.bin")
    teacher.frozen = True
    fnet = load_feature_network(CACHE / "featnet.bin")
    return train, train_lab, held, held_lab, sched, teacher, fnet


def mode_stats(samples, labels_s, centers):
    d = np.linalg.norm(samples[:, None, :] - centers[None], axis=2)
    assign = d.argmin(axis=1)
    spread = np.mean([samples[assign == k].std() for k in range(len(centers)) if (assign == k).sum() > 2])
    return spread


def main():
    train, train_lab, held, held_lab, sched, teacher, fnet = get_artifacts()
    centers = np.stack([train[train_lab == k].mean(axis=0) for k in range(8)])
    real_spread = mode_stats(held, held_lab, centers)
    lab_s = held_lab[np.random.default_rng(3).integers(0, len(held_lab), 2048)]

    for iters in (300, 600):
        config = DistillConfig(iters=iters, batch_size=128, seed=0)
        student = distill(teacher, fnet, train, train_lab, config, quiet=True)
        print(f"== iters={iters} (real within-mode spread {real_spread:.4f}) ==")
        for n in (1, 2, 4):
            for stoch in (True, False):
                ws = []
                for seed in range(5):
                    plan = SamplePlan(tuple(default_plan(n, seed=100 + seed).steps),
                                      stochastic_renoise=stoch, seed=100 + seed)
                    s = sample(student, plan, lab_s, sched, 2048)
                    ws.append(sliced_w2(s, held, 128, seed=5))
                spread = mode_stats(s, lab_s, centers)
                print(f"  {n}-step stoch={stoch}: W2={np.mean(ws):.4f}+-{np.std(ws):.4f} spread={spread:.4f}")


if __name__ == "__main__":
    main()
