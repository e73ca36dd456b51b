"""Experiment runner.

Subcommands: train, evaluate, ablate, gradcheck, gen-data.  Experiments
are described by a JSON config (schemas ship in memfuse/schemas/); a few
common fields can be overridden by flags.  Exit codes: 0 success, 1
check failure, 2 usage or config error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import NumericError, ParameterError, ShapeError
from .fusion import parse_variant
from .gradcheck import (
    DEFAULT_STEP,
    DEFAULT_THRESHOLD,
    LayerCheckConfig,
    check_layer,
    standard_variants,
)
from .metrics import confusion_to_csv
from .model import (
    ClassifierConfig,
    TrainState,
    build_state,
    evaluate,
    fit,
    head_input_dim,
)
from .serialize import load_arrays, save_arrays
from .synthdata import TaskConfig, gen_dataset, split, stack, to_csv

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


@dataclasses.dataclass
class ExperimentConfig:
    task: TaskConfig
    classifier: ClassifierConfig
    seeds: list
    out_dir: str
    train_frac: float = 0.8
    val_frac: float = 0.1
    sweep_slots: list = dataclasses.field(default_factory=lambda: [10, 20, 30, 40, 50, 100])
    sweep_variants: list = dataclasses.field(default_factory=lambda: ["memory", "memory_cross"])
    sweep_out_dims: list = dataclasses.field(default_factory=lambda: [8, 16, 32])

    def __post_init__(self):
        if not self.seeds:
            raise ParameterError("seeds list must be nonempty")


def load_experiment(path: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    doc = json.loads(Path(path).read_text())
    overrides = overrides or {}
    task = TaskConfig(**doc.get("task", {}))
    cls_doc = dict(doc.get("classifier", {}))
    cls_doc.setdefault("classes", task.classes)
    if cls_doc["classes"] != task.classes:
        raise ParameterError(
            f"classifier classes {cls_doc['classes']} != task classes {task.classes}"
        )
    for key in ("variant", "slots", "seed"):
        if key in overrides and overrides[key] is not None:
            cls_doc[key] = overrides[key]
    if "freeze_writes" in overrides and overrides["freeze_writes"]:
        cls_doc["freeze_eval_writes"] = True
    classifier = ClassifierConfig(**cls_doc)
    seeds = doc.get("seeds", [classifier.seed])
    if overrides.get("seed") is not None:
        seeds = [overrides["seed"]]
    out_dir = overrides.get("out") or doc.get("out_dir", "runs/out")
    sweep = doc.get("sweep", {})
    return ExperimentConfig(
        task=task,
        classifier=classifier,
        seeds=seeds,
        out_dir=out_dir,
        train_frac=doc.get("train_frac", 0.8),
        val_frac=doc.get("val_frac", 0.1),
        sweep_slots=sweep.get("slots", [10, 20, 30, 40, 50, 100]),
        sweep_variants=sweep.get("variants", ["memory", "memory_cross"]),
        sweep_out_dims=sweep.get("out_dims", [8, 16, 32]),
    )


def write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def curves_to_csv(curves: list) -> str:
    lines = ["epoch,train_loss,val_wa,val_ua"]
    for row in curves:
        vals = [str(row["epoch"]), repr(row["train_loss"])]
        vals.append(repr(row["val_wa"]) if "val_wa" in row else "")
        vals.append(repr(row["val_ua"]) if "val_ua" in row else "")
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def state_to_arrays(state: TrainState) -> dict:
    arrays = {f"param.{k}": v for k, v in state.params.named().items()}
    for k, v in state.adam_m.items():
        arrays[f"adam_m.{k}"] = v
    for k, v in state.adam_v.items():
        arrays[f"adam_v.{k}"] = v
    for i, mem in enumerate(state.memories):
        arrays[f"memory{i}.matrix"] = mem.matrix
        arrays[f"memory{i}.writes"] = np.array([1.0 if mem.writes_enabled else 0.0])
    arrays["step"] = np.array([float(state.step)])
    arrays["mem_seed.lo"] = np.array([float(state.mem_seed & 0xFFFFFFFF)])
    arrays["mem_seed.hi"] = np.array([float(state.mem_seed >> 32)])
    return arrays


def restore_state(state: TrainState, arrays: dict) -> TrainState:
    """Load checkpoint arrays into a freshly built state, in place."""
    named = state.params.named()
    for k, v in named.items():
        v[...] = arrays[f"param.{k}"]
        state.adam_m[k][...] = arrays[f"adam_m.{k}"]
        state.adam_v[k][...] = arrays[f"adam_v.{k}"]
    for i, mem in enumerate(state.memories):
        mem.matrix[...] = arrays[f"memory{i}.matrix"]
        mem.writes_enabled = bool(arrays[f"memory{i}.writes"][0])
    state.step = int(arrays["step"][0])
    state.mem_seed = int(arrays["mem_seed.lo"][0]) | (int(arrays["mem_seed.hi"][0]) << 32)
    return state


def run_single(exp: ExperimentConfig, seed: int, variant: Optional[str] = None, slots: Optional[int] = None):
    """Train one (variant, slots, seed) cell; returns (state, curves, report)."""
    cls = dataclasses.replace(
        exp.classifier,
        seed=seed,
        variant=variant if variant is not None else exp.classifier.variant,
        slots=slots if slots is not None else exp.classifier.slots,
    )
    data = gen_dataset(exp.task)
    train, val, test = split(data, exp.train_frac, exp.val_frac)
    state = build_state(cls, exp.task.s1, exp.task.s2)
    curves = fit(state, stack(train), stack(val))
    report = evaluate(state, stack(test))
    return state, curves, report


def metrics_doc(exp: ExperimentConfig, seed: int, report, curves, variant=None, slots=None) -> dict:
    cls = exp.classifier
    return {
        "variant": variant or cls.variant,
        "slots": slots if slots is not None else cls.slots,
        "seed": seed,
        "train_loss_final": curves[-1]["train_loss"] if curves else None,
        "epochs": cls.epochs,
        "metrics": report.to_dict(),
    }


def cmd_train(args) -> int:
    exp = load_experiment(args.config, vars(args))
    out = Path(exp.out_dir)
    seed = exp.seeds[0]
    state, curves, report = run_single(exp, seed)
    out.mkdir(parents=True, exist_ok=True)
    save_arrays(out / "checkpoint.bin", state_to_arrays(state))
    (out / "curves.csv").write_text(curves_to_csv(curves))
    (out / "confusion.csv").write_text(confusion_to_csv(report.confusion))
    write_json(out / "metrics.json", metrics_doc(exp, seed, report, curves))
    print(f"trained seed {seed}: test wa={report.wa:.4f} ua={report.ua:.4f} -> {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    exp = load_experiment(args.config, vars(args))
    out = Path(exp.out_dir)
    checkpoint = Path(args.checkpoint or out / "checkpoint.bin")
    if not checkpoint.exists():
        raise ParameterError(f"checkpoint not found: {checkpoint}")
    seed = exp.seeds[0]
    cls = dataclasses.replace(exp.classifier, seed=seed)
    data = gen_dataset(exp.task)
    _, _, test = split(data, exp.train_frac, exp.val_frac)
    state = build_state(cls, exp.task.s1, exp.task.s2)
    restore_state(state, load_arrays(checkpoint))
    report = evaluate(state, stack(test), freeze_writes=args.freeze_writes or None)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "metrics.json", metrics_doc(exp, seed, report, []))
    (out / "confusion.csv").write_text(confusion_to_csv(report.confusion))
    print(f"evaluated: wa={report.wa:.4f} ua={report.ua:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    exp = load_experiment(args.config, vars(args))
    out = Path(exp.out_dir)

    memory_size_rows = []
    for variant in exp.sweep_variants:
        for slots in exp.sweep_slots:
            for seed in exp.seeds:
                _, curves, report = run_single(exp, seed, variant=variant, slots=slots)
                memory_size_rows.append(
                    {
                        "variant": variant,
                        "slots": slots,
                        "seed": seed,
                        "wa": report.wa,
                        "ua": report.ua,
                    }
                )
                print(
                    f"[memory-size] {variant} slots={slots} seed={seed}: "
                    f"wa={report.wa:.4f} ua={report.ua:.4f}",
                    flush=True,
                )

    location_rows = []
    for variant in ("memory", "memory_single"):
        for seed in exp.seeds:
            _, _, report = run_single(exp, seed, variant=variant)
            location_rows.append(
                {"variant": variant, "slots": exp.classifier.slots, "seed": seed,
                 "wa": report.wa, "ua": report.ua}
            )
            print(f"[location] {variant} seed={seed}: wa={report.wa:.4f}", flush=True)

    out_dim_rows = []
    native = head_input_dim(
        dataclasses.replace(exp.classifier, variant="memory", out_dim=0),
        exp.task.s1,
        exp.task.s2,
    )
    for d_out in exp.sweep_out_dims:
        for seed in exp.seeds:
            cls = dataclasses.replace(exp.classifier, variant="memory_resampled", out_dim=d_out)
            sub = dataclasses.replace(exp, classifier=cls)
            _, _, report = run_single(sub, seed)
            out_dim_rows.append(
                {"variant": "memory_resampled", "out_dim": d_out, "seed": seed,
                 "wa": report.wa, "ua": report.ua}
            )
            print(f"[out-dim] d_out={d_out} seed={seed}: wa={report.wa:.4f}", flush=True)

    baseline_rows = []
    for seed in exp.seeds:
        _, _, report = run_single(exp, seed, variant="naive")
        baseline_rows.append({"variant": "naive", "seed": seed, "wa": report.wa, "ua": report.ua})
        print(f"[baseline] naive seed={seed}: wa={report.wa:.4f}", flush=True)

    doc = {
        "native_output_dim": native,
        "memory_size": memory_size_rows,
        "memory_location": location_rows,
        "output_dim": out_dim_rows,
        "baseline": baseline_rows,
    }
    write_json(out / "ablation.json", doc)
    print(f"ablation table -> {out / 'ablation.json'} ({len(memory_size_rows)} sweep rows)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    variants = standard_variants(out_dim=min(args.dim, 4))
    if args.variant != "all":
        wanted = parse_variant(args.variant, out_dim=min(args.dim, 4))
        variants = [v for v in variants if v.kind == wanted.kind]
    half = max(1, args.dim // 2)
    results = {}
    all_pass = True
    worst = {"rel": 0.0, "variant": None, "seed": None, "block": None, "index": None}
    for variant in variants:
        per_variant = []
        for seed in range(args.seeds):
            cfg = LayerCheckConfig(
                s1=half,
                s2=max(1, args.dim - half),
                slots=args.slots,
                batch=args.batch,
                variant=variant,
            )
            rep = check_layer(cfg, seed=seed, threshold=args.threshold, step=args.step)
            per_variant.append(rep)
            if rep.max_rel > worst["rel"]:
                name = rep.worst_block()
                worst = {
                    "rel": rep.max_rel,
                    "variant": variant.kind,
                    "seed": seed,
                    "block": name,
                    "index": rep.blocks[name].worst_index,
                }
            all_pass = all_pass and rep.passed
        results[variant.kind + (f"_mode{variant.mode}" if variant.kind == "memory_single" else "")] = {
            "passed": all(r.passed for r in per_variant),
            "max_rel": max(r.max_rel for r in per_variant),
            "seeds": args.seeds,
        }
    doc = {
        "passed": all_pass,
        "threshold": args.threshold,
        "step": args.step,
        "variants": results,
        "worst": worst,
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK if all_pass else EXIT_CHECK_FAILED


def cmd_gen_data(args) -> int:
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    task = TaskConfig(**doc.get("task", doc))
    data = gen_dataset(task)
    out = Path(args.out or "dataset.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(to_csv(data))
    print(f"wrote {len(data)} samples -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memfuse", description="memory-fusion experiment runner"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment JSON path")
        p.add_argument("--seed", type=int, default=None, help="override the seed list")
        p.add_argument("--slots", type=int, default=None, help="override slot count")
        p.add_argument("--variant", default=None, help="override fusion variant")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--freeze-writes", action="store_true", dest="freeze_writes")

    p_train = sub.add_parser("train", help="train one configuration")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    common(p_eval)
    p_eval.add_argument("--checkpoint", default=None)
    p_eval.set_defaults(func=cmd_evaluate)

    p_abl = sub.add_parser("ablate", help="run the ablation sweeps")
    common(p_abl)
    p_abl.set_defaults(func=cmd_ablate)

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p_gc.add_argument("--dim", type=int, default=6, help="total fused width (s1+s2)")
    p_gc.add_argument("--slots", type=int, default=4)
    p_gc.add_argument("--batch", type=int, default=3)
    p_gc.add_argument("--seeds", type=int, default=10)
    p_gc.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p_gc.add_argument("--step", type=float, default=DEFAULT_STEP)
    p_gc.add_argument("--variant", default="all")
    p_gc.set_defaults(func=cmd_gradcheck)

    p_gen = sub.add_parser("gen-data", help="export a synthetic dataset to CSV")
    p_gen.add_argument("--config", default=None, help="JSON with a task section")
    p_gen.add_argument("--out", default=None)
    p_gen.set_defaults(func=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParameterError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
