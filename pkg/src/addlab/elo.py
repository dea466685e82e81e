"""ELO ranking over pairwise comparison records.

Logistic expected score with base 10 over a 400-point scale, additive update
with constant K, bootstrap over shuffled comparison orders. Outcomes are
binary; the simulated judge always produces a winner via documented
tie-breaks.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ComparisonRecord",
    "EloTable",
    "expected_score",
    "update_ratings",
    "bootstrap_elo",
    "simulated_judge",
    "save_records",
    "load_records",
    "save_rankings",
]

R_INIT = 1000.0
K_DEFAULT = 1.0

DIMENSIONS = ("quality", "alignment")


@dataclass(frozen=True)
class ComparisonRecord:
    contestant_a: str
    contestant_b: str
    outcome: str  # "a_wins" | "b_wins"
    task: str = ""
    dimension: str = "quality"

    def __post_init__(self):
        if self.contestant_a == self.contestant_b:
            raise ValueError("a comparison needs two distinct contestants")
        if self.outcome not in ("a_wins", "b_wins"):
            raise ValueError(f"outcome must be binary, got {self.outcome!r}")
        if self.dimension not in DIMENSIONS:
            raise ValueError(f"dimension must be one of {DIMENSIONS}")


@dataclass
class EloTable:
    ratings: dict = field(default_factory=dict)
    K: float = K_DEFAULT
    r_init: float = R_INIT

    def rating(self, contestant: str) -> float:
        if contestant not in self.ratings:
            raise KeyError(f"unknown contestant {contestant!r}")
        return self.ratings[contestant]

    def ensure(self, contestant: str) -> None:
        self.ratings.setdefault(contestant, self.r_init)


def expected_score(r1: float, r2: float) -> tuple[float, float]:
    """Expected outcomes for two players; e1 + e2 == 1."""
    e1 = 1.0 / (1.0 + 10.0 ** ((r2 - r1) / 400.0))
    e2 = 1.0 / (1.0 + 10.0 ** ((r1 - r2) / 400.0))
    return e1, e2


def update_ratings(table: EloTable, record: ComparisonRecord) -> EloTable:
    """Apply one comparison: R' = R + K (S - E). Rating sum is conserved."""
    r1 = table.rating(record.contestant_a)
    r2 = table.rating(record.contestant_b)
    e1, e2 = expected_score(r1, r2)
    s1 = 1.0 if record.outcome == "a_wins" else 0.0
    table.ratings[record.contestant_a] = r1 + table.K * (s1 - e1)
    table.ratings[record.contestant_b] = r2 + table.K * ((1.0 - s1) - e2)
    return table


def bootstrap_elo(
    records: list[ComparisonRecord],
    n_boot: int = 1000,
    seed: int = 0,
    K: float = K_DEFAULT,
    r_init: float = R_INIT,
) -> dict:
    """Mean and std of final ratings over n_boot random comparison orders."""
    if not records:
        raise ValueError("no comparison records")
    if n_boot < 1:
        raise ValueError("n_boot must be >= 1")
    contestants = sorted({r.contestant_a for r in records} | {r.contestant_b for r in records})
    rng = np.random.default_rng(seed)
    results = np.empty((n_boot, len(contestants)))
    order = np.arange(len(records))
    for b in range(n_boot):
        table = EloTable({c: r_init for c in contestants}, K=K, r_init=r_init)
        rng.shuffle(order)
        for i in order:
            update_ratings(table, records[i])
        results[b] = [table.ratings[c] for c in contestants]
    return {
        c: {"mean": float(results[:, i].mean()), "std": float(results[:, i].std())}
        for i, c in enumerate(contestants)
    }


def simulated_judge(
    samples_a: np.ndarray,
    samples_b: np.ndarray,
    reference_data: np.ndarray,
    dimension: str,
    *,
    featnet,
    id_a: str = "a",
    id_b: str = "b",
    labels_a=None,
    labels_b=None,
    task: str = "",
    metric_seed: int = 0,
) -> ComparisonRecord:
    """Metric-based stand-in for a human annotator.

    quality prefers lower Frechet feature distance to the reference;
    alignment prefers higher conditioning accuracy. Ties break on lower
    sliced W2, then on lexicographic contestant id.
    """
    from .metrics import cond_accuracy, ffd, sliced_w2

    if len(samples_a) == 0 or len(samples_b) == 0:
        raise ValueError("judge needs non-empty batches")
    if dimension == "quality":
        _, fa = featnet.features(samples_a)
        _, fb = featnet.features(samples_b)
        _, fr = featnet.features(reference_data)
        score_a, score_b = -ffd(fa, fr), -ffd(fb, fr)
    elif dimension == "alignment":
        score_a = cond_accuracy(samples_a, labels_a, featnet)
        score_b = cond_accuracy(samples_b, labels_b, featnet)
    else:
        raise ValueError(f"dimension must be one of {DIMENSIONS}")
    if score_a == score_b:
        score_a = -sliced_w2(samples_a, reference_data, seed=metric_seed)
        score_b = -sliced_w2(samples_b, reference_data, seed=metric_seed)
    if score_a == score_b:
        outcome = "a_wins" if id_a < id_b else "b_wins"
    else:
        outcome = "a_wins" if score_a > score_b else "b_wins"
    return ComparisonRecord(id_a, id_b, outcome, task=task, dimension=dimension)


# -- persistence -----------------------------------------------------------------


def save_records(path, records: list[ComparisonRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["contestant_a", "contestant_b", "outcome", "task", "dimension"])
        for r in records:
            w.writerow([r.contestant_a, r.contestant_b, r.outcome, r.task, r.dimension])


def load_records(path) -> list[ComparisonRecord]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(ComparisonRecord(**row))
    return out


def save_rankings(path, rankings: dict, n_boot: int, seed: int) -> None:
    payload = {"rankings": rankings, "n_boot": n_boot, "seed": seed, "K": K_DEFAULT, "r_init": R_INIT}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
