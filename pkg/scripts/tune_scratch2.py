"""Scratch: sizing runs for refinement/init directions (not part of the suite)."""

import sys
import time

import numpy as np

from addlab.datasets import DatasetSpec, make_points
from addlab.diffusion import build_schedule, ancestral_sample
from addlab.inference import default_plan, sample
from addlab.metrics import sliced_w2, ffd
from addlab.nets import DenoiserNetwork, DenoiserSpec, pretrain_feature_network
from addlab.train import DistillConfig, train_teacher

sys.path.insert(0, "scripts")
from tune_scratch import distill


def main():
    ds = DatasetSpec("ring_mixture", 8, 20000, 0.1)
    points, labels = make_points(ds, 0)
    train, train_lab = points[:18000], labels[:18000]
    held, held_lab = points[18000:], labels[18000:]
    sched = build_schedule("cosine", 1000, True)

    rng = np.random.default_rng(1)
    print("floors: 2048v2000:",
          round(sliced_w2(train[:2048], held, 128, seed=5), 4),
          "4096v2000:", round(sliced_w2(train[:4096], held, 128, seed=5), 4))

    teacher = DenoiserNetwork.init(DenoiserSpec(data_dim=2, n_classes=8), np.random.default_rng(0))
    t0 = time.time()
    train_teacher(teacher, train, train_lab, sched, iters=4000, batch_size=128, seed=0)
    print(f"teacher: {time.time()-t0:.0f}s")
    fnet = pretrain_feature_network(train, train_lab, 8, epochs=20, seed=0)

    lab_s = held_lab[np.random.default_rng(3).integers(0, len(held_lab), 2048)]
    t_samp = ancestral_sample(teacher, 50, lab_s, sched, seed=7, batch_size=2048, data_dim=2)
    teacher_w2 = sliced_w2(t_samp, held, 128, seed=5)
    print("teacher 50-step W2:", round(teacher_w2, 4))
    _, fh = fnet.features(held)

    for iters in (400, 800):
        for init in (True, False):
            config = DistillConfig(iters=iters, batch_size=128, seed=0, pretrained_init=init)
            student = distill(teacher, fnet, train, train_lab, config, quiet=True)
            w1s, w4s = [], []
            for seed in range(5):
                s1 = sample(student, default_plan(1, seed=100 + seed), lab_s, sched, 2048)
                s4 = sample(student, default_plan(4, seed=100 + seed), lab_s, sched, 2048)
                w1s.append(sliced_w2(s1, held, 128, seed=5))
                w4s.append(sliced_w2(s4, held, 128, seed=5))
            _, fs = fnet.features(s1)
            print(f"iters={iters} pretrained={init}: "
                  f"1-step W2={np.mean(w1s):.4f} 4-step W2={np.mean(w4s):.4f} "
                  f"(4<=1: {np.mean(w4s) <= np.mean(w1s)}) FFD={ffd(fs, fh):.4f} "
                  f"ratio_vs_teacher={np.mean(w1s)/teacher_w2:.2f}")


if __name__ == "__main__":
    main()
