"""Sweep execution: batch sizes x seeds x ablations, with resumable JSONL records.

The record file is append-only JSON Lines, one self-contained record per
line. On resume, a truncated (unparseable) final line is moved to a
``.quarantine`` sidecar; already-present (batch size, seed, ablation) runs
are skipped. Runs execute serially or in a process pool; every run is a pure
function of (dataset, train config), so the record set is identical either
way. A single writer appends records as they complete, and the returned list
is always sorted by (batch size, seed, ablation).
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import data as datamod
from . import models, training
from .config import ConfigError, SweepConfig

ENV_OUT_DIR = "BATCHLAB_OUT"
DEFAULT_OUT_DIR = "batchlab_runs"


def resolve_out_dir(config: SweepConfig | None = None, explicit=None) -> Path:
    if explicit is not None:
        return Path(explicit)
    if config is not None and config.out_dir:
        return Path(config.out_dir)
    return Path(os.environ.get(ENV_OUT_DIR, DEFAULT_OUT_DIR))


def build_dataset(config: SweepConfig) -> datamod.DatasetBundle:
    spec = dict(config.dataset)
    kind = spec.pop("kind")
    if kind == "blobs":
        return datamod.make_blobs(**spec)
    if kind == "sbm":
        return datamod.make_sbm_graph(**spec)
    return datamod.load_tabular_graph(spec.pop("nodes"), spec.pop("edges"), **spec)


def build_model_spec(config: SweepConfig, bundle: datamod.DatasetBundle) -> models.ModelSpec:
    m = dict(config.model)
    kind = m.pop("kind")
    if kind == "graph_diffusion" and bundle.adjacency is None:
        raise ConfigError("graph_diffusion model requires a graph dataset")
    return models.ModelSpec(
        kind=kind,
        input_dim=bundle.features.shape[1],
        num_classes=bundle.num_classes,
        hidden_dim=m.pop("hidden", 0),
        diffusion_alpha=m.pop("diffusion_alpha", 0.0),
        diffusion_beta=m.pop("diffusion_beta", 0.0),
        diffusion_steps=m.pop("diffusion_steps", 2),
    )


def run_key(batch_size: int, seed: int, ablation_tag: str) -> tuple[int, int, str]:
    return (int(batch_size), int(seed), str(ablation_tag))


def record_key(record: training.RunRecord) -> tuple[int, int, str]:
    return run_key(record.batch_size, record.seed, record.ablation)


def load_records(path) -> list[training.RunRecord]:
    """Parse a JSONL record file, quarantining a truncated final line.

    A malformed line anywhere but the end means the file was edited or
    corrupted, and raises. A malformed *final* line is assumed to be an
    interrupted append: it is moved to ``<path>.quarantine`` and the record
    file is rewritten without it.
    """
    path = Path(path)
    if not path.exists():
        return []
    raw_lines = path.read_text().splitlines()
    records: list[training.RunRecord] = []
    for i, line in enumerate(raw_lines):
        if not line.strip():
            continue
        try:
            records.append(training.RunRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            if i == len(raw_lines) - 1:
                quarantine = path.with_suffix(path.suffix + ".quarantine")
                with quarantine.open("a") as fh:
                    fh.write(line + "\n")
                tmp = path.with_suffix(path.suffix + ".tmp")
                tmp.write_text("".join(l + "\n" for l in raw_lines[:-1]))
                tmp.replace(path)
                break
            raise ValueError(f"{path}:{i + 1}: corrupt record line ({exc})") from exc
    return records


def append_record(path, record: training.RunRecord) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        fh.write(json.dumps(record.to_dict()) + "\n")


def _train_configs(config: SweepConfig, model_spec: models.ModelSpec):
    template = config.train
    ablations = (training.Ablation(),) + tuple(config.ablations)
    for b in sorted(config.batch_sizes):
        for seed in sorted(config.seeds):
            for abl in ablations:
                yield training.TrainConfig(
                    model=model_spec,
                    batch_size=b,
                    epochs=template.epochs,
                    lr=template.lr,
                    lr_schedule=template.lr_schedule,
                    optimizer=template.optimizer,
                    lambda_causal=template.lambda_causal,
                    ablation=abl,
                    batch_schedule=template.batch_schedule,
                    early_stop_patience=template.early_stop_patience,
                    seed=seed,
                )


def _execute_run(payload) -> training.RunRecord:
    bundle, train_config = payload
    return training.train_run(bundle, train_config)


def run_sweep(
    config: SweepConfig,
    records_path=None,
    workers: int | None = None,
) -> list[training.RunRecord]:
    """Execute all missing runs of the sweep, appending records as they finish.

    Returns every record (pre-existing plus new) sorted by
    (batch size, seed, ablation), independent of execution order.
    """
    out_dir = resolve_out_dir(config)
    records_path = Path(records_path) if records_path else out_dir / "records.jsonl"
    workers = workers if workers is not None else config.workers

    existing = load_records(records_path)
    done = {record_key(r) for r in existing}
    bundle = build_dataset(config)
    model_spec = build_model_spec(config, bundle)
    pending = [
        tc
        for tc in _train_configs(config, model_spec)
        if run_key(tc.batch_size, tc.seed, tc.ablation.tag) not in done
    ]

    new_records: list[training.RunRecord] = []
    if workers <= 1:
        for tc in pending:
            record = _execute_run((bundle, tc))
            append_record(records_path, record)
            new_records.append(record)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for record in pool.map(_execute_run, [(bundle, tc) for tc in pending]):
                append_record(records_path, record)
                new_records.append(record)

    return sorted(existing + new_records, key=record_key)
