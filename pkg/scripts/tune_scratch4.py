"""Scratch: dataset candidates for the refinement direction (not part of the suite)."""

import sys
import time

import numpy as np

from addlab.datasets import DatasetSpec, make_points
from addlab.diffusion import build_schedule, ancestral_sample
from addlab.inference import SamplePlan, default_plan, sample
from addlab.metrics import sliced_w2
from addlab.nets import DenoiserNetwork, DenoiserSpec, pretrain_feature_network
from addlab.train import DistillConfig, train_teacher

sys.path.insert(0, "scripts")
from tune_scratch import distill


def trial(ds_spec, iters_teacher, iters_student, tag):
    points, labels = make_points(ds_spec, 0)
    n = len(points)
    cut = int(0.9 * n)
    train, train_lab = points[:cut], labels[:cut]
    held, held_lab = points[cut:], labels[cut:]
    sched = build_schedule("cosine", 1000, True)
    dim = points.shape[1]

    teacher = DenoiserNetwork.init(
        DenoiserSpec(data_dim=dim, n_classes=ds_spec.n_modes), np.random.default_rng(0))
    t0 = time.time()
    train_teacher(teacher, train, train_lab, sched, iters=iters_teacher, batch_size=128, seed=0)
    fnet = pretrain_feature_network(train, train_lab, ds_spec.n_modes, epochs=15, seed=0)
    lab_s = held_lab[np.random.default_rng(3).integers(0, len(held_lab), 2048)]
    t_samp = ancestral_sample(teacher, 50, lab_s, sched, seed=7, batch_size=2048, data_dim=dim)
    tw2 = sliced_w2(t_samp, held, 128, seed=5)
    print(f"[{tag}] teacher({time.time()-t0:.0f}s) W2={tw2:.4f} "
          f"featnet acc={fnet.accuracy(held, held_lab):.3f}")

    config = DistillConfig(iters=iters_student, batch_size=128, seed=0)
    student = distill(teacher, fnet, train, train_lab, config, quiet=True)
    out = {}
    for n_steps in (1, 4):
        ws = []
        for seed in range(5):
            s = sample(student, default_plan(n_steps, seed=100 + seed), lab_s, sched, 2048)
            ws.append(sliced_w2(s, held, 128, seed=5))
        out[n_steps] = np.mean(ws)
    print(f"[{tag}] 1-step={out[1]:.4f} 4-step={out[4]:.4f} 4<=1: {out[4] <= out[1]} "
          f"ratio={out[1]/tw2:.2f}")


if __name__ == "__main__":
    trial(DatasetSpec("ring_mixture", 8, 10000, 0.03), 3000, 500, "ring8-thin")
    trial(DatasetSpec("spiral", 8, 10000, 0.05), 3000, 500, "spiral")
    trial(DatasetSpec("tiny_raster", 8, 10000, 0.15), 3000, 500, "raster16d")
