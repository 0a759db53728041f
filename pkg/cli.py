from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from command_result import CommandResult
from config import ARTIFACT_DIR, DEFAULT_THREADS, LOG_LEVEL, RUN_PROFILES_PATH
from errors import (
    EXIT_INPUT,
    EXIT_NUMERIC,
    EXIT_OK,
    ConfigError,
    ImpedanceEngineError,
    exit_code_for,
)
from exports import DEFAULT_POSITIONS, export_artifacts
from gradcheck import run_gradient_suite
from logging_setup import configure_logging
from metrics import evaluate, format_table, score_traces, write_metrics_csv
from section_io import read_section, write_section
from seismic_data import (
    GeneratorConfig,
    ImpedanceSection,
    Section,
    SeismicSection,
    TraceDataset,
    ensure_paired,
    generate_pair,
    trace_step_for_interval,
)
from tcn import TcnConfig, count_parameters, receptive_field
from training import TrainConfig, predict_section, train, write_history_csv


logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
CHECKPOINT_NAME = "checkpoint.tcn"


class RunManifest(BaseModel):
    """
    Everything needed to re-run a command: the resolved options (every default
    materialized), typed configs, file paths and SHA-256 of each artifact.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    command: str
    options: Dict[str, Any]
    config: Dict[str, Any] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)
    seed: Optional[int] = None
    hashes: Dict[str, str] = Field(default_factory=dict)
    metadata: Dict[str, Any] = Field(default_factory=dict)


# ---------------------------------------------------------------------
# Option resolution: defaults < profile < --config file < flags
# ---------------------------------------------------------------------


def _data_dir() -> Path:
    return ARTIFACT_DIR / "data"


def _train_dir() -> Path:
    return ARTIFACT_DIR / "train"


def _model_options() -> Dict[str, Any]:
    return {
        "step": 150,
        "interval_m": None,
        "epochs": 2941,
        "lr": 0.001,
        "wd": 0.0001,
        "dropout": 0.2,
        "kernel": 5,
        "blocks": 6,
        "width": 8,
        "padding": "symmetric",
        "seismic_skip": True,
        "validation_includes_training": False,
        "seed": 0,
        "log_every": 100,
    }


def command_defaults(command: str) -> Dict[str, Any]:
    pair = {
        "seismic": str(_data_dir() / "seismic.seis"),
        "impedance": str(_data_dir() / "impedance.seis"),
    }
    checkpoint = str(_train_dir() / CHECKPOINT_NAME)
    if command == "generate":
        return {
            "out": str(_data_dir()),
            "traces": 2721,
            "samples": 400,
            "layers": None,
            "min_layers": 8,
            "max_layers": 16,
            "freq": 30.0,
            "noise": 0.02,
            "seed": 0,
        }
    if command == "train":
        return {**pair, "out": str(_train_dir()), **_model_options()}
    if command == "predict":
        return {
            "seismic": pair["seismic"],
            "checkpoint": checkpoint,
            "out": str(ARTIFACT_DIR / "predict"),
            "threads": DEFAULT_THREADS,
        }
    if command == "evaluate":
        return {
            **pair,
            "checkpoint": checkpoint,
            "predicted": None,
            "out": str(ARTIFACT_DIR / "evaluate"),
            "validation_includes_training": False,
            "threads": DEFAULT_THREADS,
        }
    if command == "export":
        return {
            **pair,
            "checkpoint": checkpoint,
            "out": str(ARTIFACT_DIR / "export"),
            "positions": list(DEFAULT_POSITIONS),
            "validation_includes_training": False,
            "threads": DEFAULT_THREADS,
        }
    if command == "gradcheck":
        return {"seed": 0}
    if command == "sweep":
        return {
            **pair,
            "out": str(ARTIFACT_DIR / "sweep"),
            **_model_options(),
            "kernels": [3, 5, 7],
            "blocks_list": [4, 5, 6],
            "threads": DEFAULT_THREADS,
        }
    raise ConfigError(f"unknown command {command!r}")


def load_profile(name: str, command: str, path: Optional[Path] = None) -> Dict[str, Any]:
    """
    Options a named profile sets for ``command``.

    Commands other than generate also inherit the profile's ``train`` section.
    """
    path = path or RUN_PROFILES_PATH
    if not path.exists():
        raise ConfigError(f"run profiles file {path} not found")
    payload = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    profiles = payload.get("profiles") or {}
    if name not in profiles:
        raise ConfigError(f"unknown profile {name!r} (available: {', '.join(sorted(profiles))})")
    profile = profiles[name] or {}
    options: Dict[str, Any] = {}
    if command != "generate":
        options.update(profile.get("train") or {})
    options.update(profile.get(command) or {})
    return options


def load_config_file(path: str, command: str) -> Dict[str, Any]:
    """Flat JSON options, or the ``options`` block of a manifest from ``command``."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    if "command" in payload and "options" in payload:
        manifest = RunManifest.model_validate(payload)
        if manifest.command != command:
            raise ConfigError(
                f"manifest {path} was written by {manifest.command!r}, not {command!r}"
            )
        return dict(manifest.options)
    return payload


def resolve_options(
    command: str,
    profile: Optional[str],
    config_path: Optional[str],
    flags: Mapping[str, Any],
) -> Dict[str, Any]:
    options = command_defaults(command)
    if profile:
        options.update({k: v for k, v in load_profile(profile, command).items() if k in options})
    if config_path:
        from_file = load_config_file(config_path, command)
        unknown = sorted(set(from_file) - set(options))
        if unknown:
            raise ConfigError(f"unknown keys for {command}: {', '.join(unknown)}")
        options.update(from_file)
    options.update({k: v for k, v in flags.items() if k in options})
    return options


# ---------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(
    out_dir: Path,
    command: str,
    options: Mapping[str, Any],
    inputs: Mapping[str, Path],
    outputs: Mapping[str, Path],
    config: Optional[Mapping[str, Any]] = None,
    seed: Optional[int] = None,
    metadata: Optional[Mapping[str, Any]] = None,
) -> Path:
    files = [Path(p) for p in (*inputs.values(), *outputs.values())]
    manifest = RunManifest(
        command=command,
        options=dict(options),
        config=dict(config or {}),
        inputs={k: str(v) for k, v in inputs.items()},
        outputs={k: str(v) for k, v in outputs.items()},
        seed=seed,
        hashes={str(p): _sha256(p) for p in files if p.is_file()},
        metadata=dict(metadata or {}),
    )
    target = out_dir / MANIFEST_NAME
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info("Wrote manifest to %s", target)
    return target


def _load_pair(options: Mapping[str, Any]) -> tuple[SeismicSection, ImpedanceSection]:
    seismic = read_section(options["seismic"], SeismicSection)
    impedance = read_section(options["impedance"], ImpedanceSection)
    ensure_paired(seismic, impedance)
    return seismic, impedance


def _read_predicted(path: str) -> ImpedanceSection:
    raw = read_section(path, Section)
    return ImpedanceSection(
        values=raw.values,
        trace_spacing_m=raw.trace_spacing_m,
        sample_interval=raw.sample_interval,
        predicted=True,
    )


def train_config_from(options: Mapping[str, Any]) -> TrainConfig:
    tcn = TcnConfig(
        n_blocks=options["blocks"],
        kernel=options["kernel"],
        width=options["width"],
        dropout_p=options["dropout"],
        padding_mode=options["padding"],
        seismic_skip=options["seismic_skip"],
    )
    return TrainConfig(
        lr=options["lr"],
        weight_decay=options["wd"],
        epochs=options["epochs"],
        dropout_p=options["dropout"],
        seed=options["seed"],
        log_every=options["log_every"],
        tcn=tcn,
    )


def _training_dataset(
    options: Mapping[str, Any], seismic: SeismicSection, impedance: ImpedanceSection
) -> TraceDataset:
    step = options["step"]
    if options.get("interval_m") is not None:
        step = trace_step_for_interval(options["interval_m"], seismic.trace_spacing_m)
        logger.info("Interval %.1f m maps to a trace step of %d", options["interval_m"], step)
    return TraceDataset.with_step(
        seismic, impedance, step, options["validation_includes_training"]
    )


def _checkpoint_dataset(
    options: Mapping[str, Any],
    seismic: SeismicSection,
    impedance: ImpedanceSection,
    checkpoint: Checkpoint,
) -> TraceDataset:
    """The split the checkpoint was trained on, with its own normalization."""
    if not checkpoint.stats.provenance:
        raise ConfigError("checkpoint does not record its training traces")
    return TraceDataset(
        seismic=seismic,
        impedance=impedance,
        training_indices=checkpoint.stats.provenance,
        stats=checkpoint.stats,
        validation_includes_training=options["validation_includes_training"],
    )


# ---------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------


def cmd_generate(options: Dict[str, Any]) -> CommandResult:
    layers = options["layers"]
    generator = GeneratorConfig(
        n_traces=options["traces"],
        n_samples=options["samples"],
        min_layers=layers if layers is not None else options["min_layers"],
        max_layers=layers if layers is not None else options["max_layers"],
        ricker_freq=options["freq"],
        noise_std=options["noise"],
        seed=options["seed"],
    )
    impedance, seismic = generate_pair(generator)
    out = Path(options["out"])
    outputs = {
        "impedance": write_section(out / "impedance.seis", impedance),
        "seismic": write_section(out / "seismic.seis", seismic),
    }
    manifest = write_manifest(
        out,
        "generate",
        options,
        inputs={},
        outputs=outputs,
        config=generator.model_dump(mode="json"),
        seed=generator.seed,
    )
    return CommandResult(
        success=True,
        message=f"Generated {seismic.n_traces}x{seismic.n_samples} sections in {out}",
        metadata={"manifest": str(manifest)},
    )


def cmd_train(options: Dict[str, Any]) -> CommandResult:
    config = train_config_from(options)
    seismic, impedance = _load_pair(options)
    dataset = _training_dataset(options, seismic, impedance)
    result = train(dataset, config)

    out = Path(options["out"])
    outputs = {
        "checkpoint": save_checkpoint(out / CHECKPOINT_NAME, result.checkpoint),
        "history": write_history_csv(out / "history.csv", result.history),
    }
    metadata = {
        "training_indices": list(dataset.training_indices),
        "final_loss": result.history[-1],
        "parameter_count": count_parameters(config.tcn),
        "receptive_field": receptive_field(config.tcn),
        "optimizer_steps": result.optimizer_steps,
    }
    manifest = write_manifest(
        out,
        "train",
        options,
        inputs={"seismic": Path(options["seismic"]), "impedance": Path(options["impedance"])},
        outputs=outputs,
        config=config.model_dump(mode="json"),
        seed=config.seed,
        metadata=metadata,
    )
    return CommandResult(
        success=True,
        message=(
            f"Trained on {len(dataset.training_indices)} traces for {config.epochs} epochs; "
            f"final loss {result.history[-1]:.6e}; checkpoint {outputs['checkpoint']}"
        ),
        metadata={"manifest": str(manifest), **metadata},
    )


def cmd_predict(options: Dict[str, Any]) -> CommandResult:
    seismic = read_section(options["seismic"], SeismicSection)
    checkpoint = load_checkpoint(options["checkpoint"])
    started = time.perf_counter()
    predicted = predict_section(seismic, checkpoint, threads=options["threads"])
    elapsed = time.perf_counter() - started

    out = Path(options["out"])
    outputs = {"predicted": write_section(out / "predicted.seis", predicted)}
    manifest = write_manifest(
        out,
        "predict",
        options,
        inputs={"seismic": Path(options["seismic"]), "checkpoint": Path(options["checkpoint"])},
        outputs=outputs,
        config=checkpoint.config.model_dump(mode="json"),
        seed=checkpoint.seed,
        metadata={"inference_seconds": elapsed, "threads": options["threads"]},
    )
    return CommandResult(
        success=True,
        message=f"Predicted {predicted.n_traces} traces in {elapsed:.3f} s -> {outputs['predicted']}",
        metadata={"manifest": str(manifest), "inference_seconds": elapsed},
    )


def cmd_evaluate(options: Dict[str, Any]) -> CommandResult:
    seismic, impedance = _load_pair(options)
    checkpoint = load_checkpoint(options["checkpoint"])
    dataset = _checkpoint_dataset(options, seismic, impedance, checkpoint)
    inputs = {
        "seismic": Path(options["seismic"]),
        "impedance": Path(options["impedance"]),
        "checkpoint": Path(options["checkpoint"]),
    }
    if options["predicted"]:
        predicted = _read_predicted(options["predicted"])
        ensure_paired(impedance, predicted)
        training = score_traces(impedance, predicted, dataset.training_indices, "training")
        validation = score_traces(impedance, predicted, dataset.validation_indices, "validation")
        inputs["predicted"] = Path(options["predicted"])
    else:
        training, validation = evaluate(dataset, checkpoint, threads=options["threads"])

    out = Path(options["out"])
    outputs = {"metrics": write_metrics_csv(out / "metrics.csv", [training, validation])}
    metadata = {
        "training_pcc": training.mean_pcc,
        "training_r2": training.mean_r2,
        "validation_pcc": validation.mean_pcc,
        "validation_r2": validation.mean_r2,
    }
    manifest = write_manifest(
        out,
        "evaluate",
        options,
        inputs=inputs,
        outputs=outputs,
        config=checkpoint.config.model_dump(mode="json"),
        seed=checkpoint.seed,
        metadata=metadata,
    )
    return CommandResult(
        success=True,
        message=format_table(training, validation),
        metadata={"manifest": str(manifest), **metadata},
    )


def cmd_export(options: Dict[str, Any]) -> CommandResult:
    seismic, impedance = _load_pair(options)
    checkpoint = load_checkpoint(options["checkpoint"])
    dataset = _checkpoint_dataset(options, seismic, impedance, checkpoint)
    summary = export_artifacts(
        dataset,
        checkpoint,
        options["out"],
        positions=[float(p) for p in options["positions"]],
        threads=options["threads"],
    )
    manifest = write_manifest(
        summary.out_dir,
        "export",
        options,
        inputs={
            "seismic": Path(options["seismic"]),
            "impedance": Path(options["impedance"]),
            "checkpoint": Path(options["checkpoint"]),
        },
        outputs=summary.files,
        config=checkpoint.config.model_dump(mode="json"),
        seed=checkpoint.seed,
        metadata={"trace_indices": list(summary.trace_indices)},
    )
    return CommandResult(
        success=True,
        message=f"Exported {len(summary.files)} files to {summary.out_dir}",
        metadata={"manifest": str(manifest)},
    )


def cmd_gradcheck(options: Dict[str, Any]) -> CommandResult:
    results = run_gradient_suite(options["seed"])
    lines = [f"{'check':<20}{'max rel error':>15}{'tol':>10}  status"]
    failed: List[str] = []
    for name, (error, tol) in results.items():
        ok = error < tol
        if not ok:
            failed.append(name)
        lines.append(f"{name:<20}{error:>15.3e}{tol:>10.0e}  {'ok' if ok else 'FAIL'}")
    return CommandResult(
        success=not failed,
        message="\n".join(lines),
        exit_code=EXIT_NUMERIC if failed else EXIT_OK,
        metadata={"failed": failed},
    )


SWEEP_COLUMNS = [
    "kernel",
    "blocks",
    "receptive_field",
    "parameter_count",
    "train_pcc",
    "train_r2",
    "val_pcc",
    "val_r2",
]


def cmd_sweep(options: Dict[str, Any]) -> CommandResult:
    """Train one model per (kernel, blocks) pair on the same split."""
    seismic, impedance = _load_pair(options)
    dataset = _training_dataset(options, seismic, impedance)
    rows: List[Dict[str, Any]] = []
    for kernel in options["kernels"]:
        for blocks in options["blocks_list"]:
            config = train_config_from({**options, "kernel": kernel, "blocks": blocks})
            logger.info("Sweep: kernel=%d blocks=%d", kernel, blocks)
            result = train(dataset, config)
            training, validation = evaluate(dataset, result.checkpoint, threads=options["threads"])
            rows.append(
                {
                    "kernel": kernel,
                    "blocks": blocks,
                    "receptive_field": receptive_field(config.tcn),
                    "parameter_count": count_parameters(config.tcn),
                    "train_pcc": training.mean_pcc,
                    "train_r2": training.mean_r2,
                    "val_pcc": validation.mean_pcc,
                    "val_r2": validation.mean_r2,
                }
            )

    out = Path(options["out"])
    out.mkdir(parents=True, exist_ok=True)
    sweep_csv = out / "sweep.csv"
    with sweep_csv.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for entry in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in entry.items()})
    manifest = write_manifest(
        out,
        "sweep",
        options,
        inputs={"seismic": Path(options["seismic"]), "impedance": Path(options["impedance"])},
        outputs={"sweep": sweep_csv},
        seed=options["seed"],
    )
    best = max(rows, key=lambda r: r["val_pcc"])
    return CommandResult(
        success=True,
        message=(
            f"Swept {len(rows)} configurations -> {sweep_csv}; best validation PCC "
            f"{best['val_pcc']:.2f} at kernel={best['kernel']} blocks={best['blocks']}"
        ),
        metadata={"manifest": str(manifest)},
    )


COMMANDS: Dict[str, Callable[[Dict[str, Any]], CommandResult]] = {
    "generate": cmd_generate,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "export": cmd_export,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
}


# ---------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seismic", help="seismic SEIS1 file")
    parser.add_argument("--impedance", help="impedance SEIS1 file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--step", type=int, help="use every step-th trace for training")
    parser.add_argument("--interval-m", type=float, help="training trace interval in metres")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float, help="Adam learning rate")
    parser.add_argument("--wd", type=float, help="L2 weight decay")
    parser.add_argument("--dropout", type=float)
    parser.add_argument("--kernel", type=int)
    parser.add_argument("--blocks", type=int, help="number of temporal blocks")
    parser.add_argument("--width", type=int, help="output channels of every block")
    parser.add_argument("--padding", choices=["symmetric", "causal"])
    parser.add_argument(
        "--no-seismic-skip",
        dest="seismic_skip",
        action="store_false",
        help="feed only the last block's features to the head",
    )
    parser.add_argument("--validation-includes-training", action="store_true")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--log-every", type=int)


def build_parser() -> argparse.ArgumentParser:
    # Every flag defaults to SUPPRESS so only explicit flags reach resolve_options.
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--profile", help="named profile from the run profiles file")
    common.add_argument("--config", help="flat JSON options file or a previous manifest.json")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument("--threads", type=int, help="inference worker threads")

    parser = argparse.ArgumentParser(
        prog="tcn-impedance",
        description="Seismic to acoustic impedance with a temporal convolutional network.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(
            name, help=help_text, parents=[common], argument_default=argparse.SUPPRESS
        )

    gen = add("generate", "synthesize a layered impedance model and its seismic")
    gen.add_argument("--out", help="output directory")
    gen.add_argument("--traces", type=int)
    gen.add_argument("--samples", type=int)
    gen.add_argument("--layers", type=int, help="fixed layer count")
    gen.add_argument("--min-layers", type=int)
    gen.add_argument("--max-layers", type=int)
    gen.add_argument("--freq", type=float, help="Ricker peak frequency (Hz)")
    gen.add_argument("--noise", type=float, help="noise std relative to trace RMS")
    gen.add_argument("--seed", type=int)

    _add_model_flags(add("train", "train a model on a seismic/impedance pair"))

    pred = add("predict", "predict impedance for every trace of a seismic section")
    pred.add_argument("--seismic")
    pred.add_argument("--checkpoint")
    pred.add_argument("--out")

    ev = add("evaluate", "PCC and r2 on the training and validation splits")
    ev.add_argument("--seismic")
    ev.add_argument("--impedance")
    ev.add_argument("--checkpoint")
    ev.add_argument("--predicted", help="score a predicted SEIS1 file instead of re-running")
    ev.add_argument("--out")
    ev.add_argument("--validation-includes-training", action="store_true")

    ex = add("export", "difference section, trace, scatter and metrics files")
    ex.add_argument("--seismic")
    ex.add_argument("--impedance")
    ex.add_argument("--checkpoint")
    ex.add_argument("--out")
    ex.add_argument("--positions", type=float, nargs="+", help="trace positions as fractions")
    ex.add_argument("--validation-includes-training", action="store_true")

    gc = add("gradcheck", "finite-difference check of every layer and the model")
    gc.add_argument("--seed", type=int)

    sw = add("sweep", "train and score a grid of kernel sizes and block counts")
    _add_model_flags(sw)
    sw.add_argument("--kernels", type=int, nargs="+")
    sw.add_argument("--blocks-list", type=int, nargs="+")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    flags = vars(parser.parse_args(argv))
    command = flags.pop("command")
    profile = flags.pop("profile", None)
    config_path = flags.pop("config", None)
    configure_logging(flags.pop("log_level", LOG_LEVEL))

    try:
        options = resolve_options(command, profile, config_path, flags)
        result = COMMANDS[command](options)
    except ImpedanceEngineError as exc:
        logger.error("%s failed: %s", command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except ValidationError as exc:
        logger.error("%s: invalid configuration: %s", command, exc)
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, json.JSONDecodeError, yaml.YAMLError) as exc:
        logger.error("%s: %s", command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    print(result.message)
    if not result.success:
        logger.error("%s reported failure: %s", command, result.metadata)
    return result.exit_code


__all__ = [
    "RunManifest",
    "command_defaults",
    "load_profile",
    "load_config_file",
    "resolve_options",
    "write_manifest",
    "train_config_from",
    "cmd_generate",
    "cmd_train",
    "cmd_predict",
    "cmd_evaluate",
    "cmd_export",
    "cmd_gradcheck",
    "cmd_sweep",
    "build_parser",
    "main",
]
