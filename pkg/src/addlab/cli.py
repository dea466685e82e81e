"""Command-line entry points for the full pipeline.

One executable with subcommands; every run resolves its JSON config, writes a
frozen copy (with config and code hashes) into its output directory, and only
touches that directory. Exit codes: 0 ok, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import serialize
from .autodiff import NonFiniteError
from .datasets import DatasetSpec, generate_dataset, load_dataset
from .diffusion import ancestral_sample, build_schedule, dump_schedule_csv
from .elo import bootstrap_elo, save_rankings, save_records, simulated_judge
from .inference import SamplePlan, default_plan, sample, sample_grid
from .metrics import SCHEMA_VERSION, evaluate_checkpoint
from .nets import (
    DenoiserNetwork,
    DenoiserSpec,
    FeatureSpec,
    load_denoiser,
    load_feature_network,
    pretrain_feature_network,
    save_net,
)
from .optim import NonFiniteGradient
from .plots import points_svg, scatter_svg
from .train import (
    DistillConfig,
    RunPaths,
    TrainingDiverged,
    config_hash,
    run_distillation,
    train_teacher,
)

COMMANDS = ("gen-data", "train-teacher", "train-featnet", "distill", "sample", "eval", "elo", "ablate", "report")


class InputError(Exception):
    """Bad config, missing file, or malformed request (exit 2)."""


def code_version_hash() -> str:
    """Hash of the package sources, recorded with every artifact."""
    pkg = Path(__file__).parent
    h = hashlib.sha256()
    for path in sorted(pkg.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def load_config(path, allowed_keys: set) -> dict:
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise InputError(f"config {path} is not valid JSON: {e}") from e
    # Frozen copies wrap the original config in an envelope.
    if "config" in raw and "command" in raw:
        raw = raw["config"]
    unknown = set(raw) - allowed_keys
    if unknown:
        raise InputError(f"unknown config keys {sorted(unknown)}; allowed: {sorted(allowed_keys)}")
    return raw


def freeze_config(out_dir: Path, command: str, config: dict, seed) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    envelope = {
        "command": command,
        "config": config,
        "seed": seed,
        "config_hash": config_hash(config),
        "code_hash": code_version_hash(),
    }
    (out_dir / "resolved_config.json").write_text(
        json.dumps(envelope, indent=2, sort_keys=True, default=str) + "\n"
    )


def _require(config: dict, *keys):
    for key in keys:
        if key not in config:
            raise InputError(f"config is missing required key {key!r}")


def _existing(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise InputError(f"{what} not found: {path}")
    return path


# -- commands -------------------------------------------------------------------


def cmd_gen_data(args):
    config = load_config(args.config, {"dataset", "seed"})
    _require(config, "dataset")
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    try:
        spec = DatasetSpec(**config["dataset"])
    except TypeError as e:
        raise InputError(f"bad dataset spec: {e}") from e
    out = Path(args.out)
    freeze_config(out, "gen-data", config, seed)
    path = generate_dataset(spec, seed, out)
    if not args.quiet:
        print(f"dataset written: {path}")


def cmd_train_teacher(args):
    allowed = {"data", "schedule", "net", "iters", "batch_size", "lr", "seed"}
    config = load_config(args.config, allowed)
    _require(config, "data")
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    data = load_dataset(_existing(config["data"], "dataset"))
    sched_cfg = config.get("schedule", {})
    sched = build_schedule(sched_cfg.get("kind", "cosine"), sched_cfg.get("T", 1000), True)
    net_cfg = config.get("net", {})
    try:
        spec = DenoiserSpec(
            data_dim=data["data_dim"], n_classes=data["n_classes"], mode="eps", **net_cfg
        )
    except TypeError as e:
        raise InputError(f"bad net spec: {e}") from e
    out = Path(args.out)
    freeze_config(out, "train-teacher", config, seed)
    net = DenoiserNetwork.init(spec, np.random.default_rng(seed))
    log_rows = []
    train_teacher(
        net,
        data["train_points"],
        data["train_labels"],
        sched,
        iters=config.get("iters", 4000),
        batch_size=config.get("batch_size", 128),
        lr=config.get("lr", 3e-4),
        seed=seed,
        log=lambda step, loss: log_rows.append((step, loss)),
    )
    save_net(
        out / "teacher.bin",
        net,
        manifest_extra={
            "schedule": sched.kind,
            "T": sched.T,
            "config_hash": config_hash(config),
        },
    )
    dump_schedule_csv(sched, out / "schedule.csv")
    with open(out / "train_log.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss"])
        for step, loss in log_rows:
            w.writerow([step, repr(loss)])
    if not args.quiet:
        print(f"teacher written: {out / 'teacher.bin'}")


def cmd_train_featnet(args):
    allowed = {"data", "net", "epochs", "batch_size", "lr", "seed"}
    config = load_config(args.config, allowed)
    _require(config, "data")
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    data = load_dataset(_existing(config["data"], "dataset"))
    net_cfg = config.get("net", {})
    try:
        spec = FeatureSpec(data_dim=data["data_dim"], n_classes=data["n_classes"], **net_cfg)
    except TypeError as e:
        raise InputError(f"bad net spec: {e}") from e
    out = Path(args.out)
    freeze_config(out, "train-featnet", config, seed)
    net = pretrain_feature_network(
        data["train_points"],
        data["train_labels"],
        data["n_classes"],
        epochs=config.get("epochs", 30),
        batch_size=config.get("batch_size", 256),
        lr=config.get("lr", 3e-3),
        seed=seed,
        spec=spec,
    )
    acc = net.accuracy(data["held_points"], data["held_labels"])
    save_net(out / "featnet.bin", net, manifest_extra={"heldout_accuracy": acc})
    if not args.quiet:
        print(f"featnet written: {out / 'featnet.bin'} (held-out accuracy {acc:.3f})")


def _distill_config(raw: dict, seed) -> DistillConfig:
    raw = dict(raw)
    if "lambda" in raw:  # config files may use the symbol name
        raw["lam"] = raw.pop("lambda")
    if seed is not None:
        raw["seed"] = seed
    try:
        return DistillConfig(**raw)
    except TypeError as e:
        raise InputError(f"bad distillation config: {e}") from e


def cmd_distill(args):
    allowed = {"teacher", "featnet", "data", "distill"}
    config = load_config(args.config, allowed)
    _require(config, "teacher", "featnet", "data")
    dcfg = _distill_config(config.get("distill", {}), args.seed)
    out = Path(args.out)
    paths = RunPaths(
        teacher=_existing(config["teacher"], "teacher checkpoint"),
        featnet=_existing(config["featnet"], "feature network checkpoint"),
        data=_existing(config["data"], "dataset"),
        out_dir=out,
    )
    freeze_config(out, "distill", {**config, "distill": asdict(dcfg)}, dcfg.seed)
    result = run_distillation(dcfg, paths)
    if not args.quiet:
        print(f"student written: {result['student']}")


def cmd_sample(args):
    allowed = {"checkpoint", "data", "n_steps", "seeds", "batch_size", "taus", "svg", "seed"}
    config = load_config(args.config, allowed)
    _require(config, "checkpoint", "data")
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    ckpt = _existing(config["checkpoint"], "checkpoint")
    data = load_dataset(_existing(config["data"], "dataset"))
    net = load_denoiser(ckpt)
    manifest = serialize.read_manifest(str(ckpt) + ".json")
    sched = build_schedule(manifest.get("schedule", "cosine"), manifest.get("T", 1000), True)
    out = Path(args.out)
    freeze_config(out, "sample", config, seed)
    batch_size = config.get("batch_size", 256)
    rng = np.random.default_rng(seed)
    if net.spec.n_classes:
        labels = data["held_labels"][rng.integers(0, len(data["held_labels"]), batch_size)]
        conds = {"labels": labels}
    else:
        conds = {"uncond": None}
    index = sample_grid(
        net,
        config.get("n_steps", [1, 4]),
        conds,
        config.get("seeds", [seed]),
        sched,
        out,
        batch_size=batch_size,
        taus=tuple(config.get("taus", (250, 500, 750, 1000))),
    )
    if config.get("svg", True) and data["data_dim"] == 2:
        for entry in index["entries"]:
            batch = serialize.load_tensors(out / entry["file"])["samples"]
            points_svg(out / (entry["file"] + ".svg"), batch, title=entry["file"])
    if not args.quiet:
        print(f"{len(index['entries'])} batches written under {out}")


def cmd_eval(args):
    allowed = {"checkpoint", "featnet", "data", "plan_steps", "n_steps", "n_samples", "n_proj", "seed"}
    config = load_config(args.config, allowed)
    _require(config, "checkpoint", "featnet", "data")
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    ckpt = _existing(config["checkpoint"], "checkpoint")
    featnet = load_feature_network(_existing(config["featnet"], "feature network checkpoint"))
    data = load_dataset(_existing(config["data"], "dataset"))
    out = Path(args.out)
    freeze_config(out, "eval", config, seed)
    report = evaluate_checkpoint(
        ckpt,
        data,
        featnet,
        plan=config.get("plan_steps"),
        n_steps=config.get("n_steps"),
        n_samples=config.get("n_samples", 2048),
        seed=seed,
        n_proj=config.get("n_proj", 128),
        out_jsonl=out / "metrics.jsonl",
        config_hash=config_hash(config),
    )
    if not args.quiet:
        print(report.to_json())


def _contestant_sampler(spec: dict, data, featnet):
    ckpt = _existing(spec["checkpoint"], "contestant checkpoint")
    net = load_denoiser(ckpt)
    manifest = serialize.read_manifest(str(ckpt) + ".json")
    sched = build_schedule(manifest.get("schedule", "cosine"), manifest.get("T", 1000), True)

    if net.spec.mode == "x0":
        steps = spec.get("plan_steps")
        if steps is None:
            raise InputError(f"x0-mode contestant needs plan_steps: {spec}")
        cost = len(steps)

        def run(labels, seed):
            return sample(net, SamplePlan(tuple(steps), seed=seed), labels, sched, len(labels))

    else:
        n_steps = spec.get("n_steps")
        if n_steps is None:
            raise InputError(f"eps-mode contestant needs n_steps: {spec}")
        cost = int(n_steps)

        def run(labels, seed):
            return ancestral_sample(
                net, n_steps, labels, sched, seed, batch_size=len(labels),
                data_dim=net.spec.data_dim,
            )

    return run, cost


def cmd_elo(args):
    allowed = {"contestants", "featnet", "data", "n_boot", "batch_size", "seed"}
    config = load_config(args.config, allowed)
    _require(config, "contestants", "featnet", "data")
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    featnet = load_feature_network(_existing(config["featnet"], "feature network checkpoint"))
    data = load_dataset(_existing(config["data"], "dataset"))
    samplers = {}
    costs = {}
    for name, spec in config["contestants"].items():
        samplers[name], costs[name] = _contestant_sampler(spec, data, featnet)
    out = Path(args.out)
    freeze_config(out, "elo", config, seed)

    held, held_labels = data["held_points"], data["held_labels"]
    batch_size = config.get("batch_size", 256)
    names = sorted(samplers)
    records = []
    rng = np.random.default_rng(seed)
    for cls in range(data["n_classes"]):
        ref = held[held_labels == cls]
        labels = np.full(batch_size, cls)
        batch_seed = int(rng.integers(0, 2**31))
        batches = {n: samplers[n](labels, batch_seed) for n in names}
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                for dim in ("quality", "alignment"):
                    records.append(
                        simulated_judge(
                            batches[a], batches[b], ref, dim,
                            featnet=featnet, id_a=a, id_b=b,
                            labels_a=labels, labels_b=labels, task=f"class{cls}",
                        )
                    )
    save_records(out / "records.csv", records)
    n_boot = config.get("n_boot", 1000)
    rankings = {}
    for dim in ("quality", "alignment"):
        dim_records = [r for r in records if r.dimension == dim]
        rankings[dim] = bootstrap_elo(dim_records, n_boot=n_boot, seed=seed)
    rankings["mean"] = {
        name: {
            "mean": (rankings["quality"][name]["mean"] + rankings["alignment"][name]["mean"]) / 2.0,
            "std": (rankings["quality"][name]["std"] + rankings["alignment"][name]["std"]) / 2.0,
        }
        for name in names
    }
    rankings["inference_steps"] = costs
    save_rankings(out / "rankings.json", rankings, n_boot, seed)
    if not args.quiet:
        for name in names:
            print(f"{name}: mean ELO {rankings['mean'][name]['mean']:.1f} (steps={costs[name]})")


def cmd_ablate(args):
    allowed = {"teacher", "featnet", "data", "base", "axes", "seeds", "eval"}
    config = load_config(args.config, allowed)
    _require(config, "teacher", "featnet", "data", "axes")
    teacher = _existing(config["teacher"], "teacher checkpoint")
    featnet_path = _existing(config["featnet"], "feature network checkpoint")
    data_path = _existing(config["data"], "dataset")
    out = Path(args.out)
    freeze_config(out, "ablate", config, config.get("seeds", [0]))

    axes = config["axes"]
    seeds = config.get("seeds", [0])
    base = config.get("base", {})
    eval_cfg = config.get("eval", {})
    runs = []
    for axis, values in axes.items():
        for value in values:
            for seed in seeds:
                runs.append((axis, value, seed))

    featnet = load_feature_network(featnet_path)
    data = load_dataset(data_path)

    def one_run(axis, value, seed):
        tag = f"{axis}={value}_seed{seed}".replace("+", "p").replace(" ", "")
        run_dir = out / tag
        dcfg = _distill_config({**base, axis: value}, seed)
        run_distillation(dcfg, RunPaths(teacher, featnet_path, data_path, run_dir))
        report = evaluate_checkpoint(
            run_dir / "student.bin",
            data,
            featnet,
            plan=eval_cfg.get("plan_steps", [dcfg.T]),
            n_samples=eval_cfg.get("n_samples", 2048),
            seed=eval_cfg.get("seed", 0),
            out_jsonl=run_dir / "metrics.jsonl",
            config_hash=config_hash(asdict(dcfg)),
        )
        return tag, report

    results = []
    if args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(one_run, *run) for run in runs]
            results = [f.result() for f in futures]
    else:
        results = [one_run(*run) for run in runs]

    with open(out / "ablation.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["run", "sliced_w2", "ffd", "cond_accuracy"])
        for tag, report in results:
            w.writerow([tag, repr(report.sliced_w2), repr(report.ffd), repr(report.cond_accuracy)])
    if not args.quiet:
        print(f"{len(results)} ablation runs under {out}")


def cmd_report(args):
    out = Path(args.out)
    rows = []
    rankings = None
    schema_versions = {}
    for run_dir in args.run_dirs:
        run_dir = Path(run_dir)
        if not run_dir.is_dir():
            print(f"warning: skipping malformed run dir {run_dir}", file=sys.stderr)
            continue
        metrics_file = run_dir / "metrics.jsonl"
        if metrics_file.exists():
            for line in metrics_file.read_text().splitlines():
                rec = json.loads(line)
                schema_versions[run_dir.name] = rec.get("schema_version")
                rows.append(
                    (run_dir.name, rec["sliced_w2"], rec["ffd"], rec.get("cond_accuracy"))
                )
        rank_file = run_dir / "rankings.json"
        if rank_file.exists():
            rankings = json.loads(rank_file.read_text())
    if not rows and rankings is None:
        raise InputError("no completed runs found")
    versions = set(schema_versions.values())
    if len(versions) > 1:
        raise InputError(
            f"metric schema mismatch across runs: {sorted(schema_versions.items())}"
        )
    if versions and versions != {SCHEMA_VERSION}:
        raise InputError(f"unsupported metric schema versions {sorted(versions)}, expected {SCHEMA_VERSION}")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["run", "sliced_w2", "ffd", "cond_accuracy"])
        for row in rows:
            w.writerow(row)
    if rankings is not None:
        names = sorted(rankings["mean"])
        steps = [rankings["inference_steps"][n] for n in names]
        elos = [rankings["mean"][n]["mean"] for n in names]
        scatter_svg(
            out / "elo_vs_steps.svg",
            steps,
            elos,
            names,
            title="ELO vs inference steps",
            xlabel="inference steps",
            ylabel="mean ELO",
        )
    if not args.quiet:
        print(f"report written under {out}")


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="addlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in [
        ("gen-data", cmd_gen_data),
        ("train-teacher", cmd_train_teacher),
        ("train-featnet", cmd_train_featnet),
        ("distill", cmd_distill),
        ("sample", cmd_sample),
        ("eval", cmd_eval),
        ("elo", cmd_elo),
        ("ablate", cmd_ablate),
        ("report", cmd_report),
    ]:
        p = sub.add_parser(name)
        if name == "report":
            p.add_argument("run_dirs", nargs="+", help="completed run directories")
        else:
            p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--quiet", action="store_true")
        if name == "ablate":
            p.add_argument("--jobs", type=int, default=1, help="parallel runs")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
        return 0
    except (InputError, FileNotFoundError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (TrainingDiverged, NonFiniteError, NonFiniteGradient) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
