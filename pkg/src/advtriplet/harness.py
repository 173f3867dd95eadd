"""Training, evaluation, epsilon sweeps and loss comparisons.

Every run is a pure function of (config, seed) apart from the ``wall_time``
field of metrics records. Sub-streams of the seed's RNG are dedicated to
data generation, the identity split, weight init, batching/mining and the
query/gallery draw, so changing one stage never shifts another.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, serialize_config
from .dataset import (Dataset, QueryGallerySplit, SyntheticSpec, generate_synthetic,
                      load_features, make_query_gallery, split_identities)
from .embedder import (AdamState, EmbedderParams, GradientBuffer, backward, beta1,
                       forward, init_params, learning_rate, adam_step, save_checkpoint)
from .errors import ConfigError, NumericError
from .linalg import RNG_ALGORITHM, Rng
from .losses import batch_loss, select_loss
from .metrics import EvalReport, evaluate
from .mining import Batch, epoch_batches, mine_triplets

log = logging.getLogger(__name__)

STREAM_DATA, STREAM_SPLIT, STREAM_INIT, STREAM_BATCH, STREAM_QUERY = 1, 2, 3, 4, 5

# epsilon grid used by the sensitivity study, in the order it was reported
DEFAULT_EPSILON_GRID = (1e-4, 5e-3, 1e-3, 5e-2, 1e-2, 5e-1, 1e-1)


@dataclass
class TrainResult:
    params: EmbedderParams
    records: list[dict]


def load_dataset(cfg: ExperimentConfig, seed: int) -> Dataset:
    d = cfg.data
    if d.source == "synthetic":
        spec = SyntheticSpec(d.n_identities, d.samples_per_identity, d.dim, d.cluster_std,
                             d.center_scale, d.n_cameras, seed)
        return generate_synthetic(spec, Rng(seed, STREAM_DATA))
    return load_features(d.source)


def prepare_data(cfg: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset, QueryGallerySplit]:
    ds = load_dataset(cfg, seed)
    train, test = split_identities(ds, cfg.data.train_fraction, Rng(seed, STREAM_SPLIT))
    split = make_query_gallery(test, Rng(seed, STREAM_QUERY), cfg.eval.exclude_same_camera_same_id,
                               cfg.eval.drop_empty_queries)
    return train, test, split


def make_loss_fn(cfg: ExperimentConfig):
    lc = cfg.loss
    return select_loss(lc.name, perturbation=lc.perturbation(), gaussian=lc.gaussian(),
                       margin=lc.margin)


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True)


def train(cfg: ExperimentConfig, seed: int, out_dir=None) -> TrainResult:
    """Train the embedder; optionally write metrics.jsonl, model.ckpt and run.json.

    On a non-finite loss or gradient a diagnostic record is appended to the
    log, no checkpoint is written, and NumericError propagates.
    """
    train_set, test_set, split = prepare_data(cfg, seed)
    sizes = [train_set.dim, *cfg.model.hidden, cfg.model.out_dim]
    params = init_params(sizes, Rng(seed, STREAM_INIT), cfg.model.activation)
    rng = Rng(seed, STREAM_BATCH)
    loss_fn = make_loss_fn(cfg)
    state = AdamState.zeros_like(params)
    buf = GradientBuffer.zeros_like(params)

    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "run.json").write_text(json.dumps({
            "seed": seed, "rng": RNG_ALGORITHM, "version": __version__,
            "config": serialize_config(cfg)}, indent=2, sort_keys=True) + "\n")
        log_fh = open(out / "metrics.jsonl", "w", encoding="utf-8")

    records = []
    try:
        for epoch in range(1, cfg.train.epochs + 1):
            start = time.perf_counter()
            losses = []
            for bi, b in enumerate(epoch_batches(train_set.identities, cfg.batch, rng)):
                x = train_set.features[b.indices]
                emb, tape = forward(params, x)
                batch = Batch.from_embeddings(emb, train_set.identities[b.indices])
                triplets = mine_triplets(batch, cfg.mining, rng)
                bl = batch_loss(emb, triplets, loss_fn)
                if not math.isfinite(bl.value) or not np.all(np.isfinite(bl.grad_embeddings)):
                    raise NumericError(f"non-finite loss at epoch {epoch}, batch {bi}: {bl.value}")
                buf.zero()
                backward(params, tape, bl.grad_embeddings, buf)
                adam_step(params, buf, state, cfg.optim, epoch)
                losses.append(bl.value)
            rec = {"epoch": epoch, "loss": sum(losses) / len(losses),
                   "lr": learning_rate(cfg.optim, epoch), "beta1": beta1(cfg.optim, epoch),
                   "wall_time": time.perf_counter() - start}
            if cfg.train.eval_every and epoch % cfg.train.eval_every == 0:
                rep = evaluate(params, test_set, split)
                rec["rank1"], rec["map"] = rep.rank(1), rep.map
            records.append(rec)
            log.info("epoch %d loss %.6f lr %.3g", epoch, rec["loss"], rec["lr"])
            if log_fh:
                log_fh.write(_dump(rec) + "\n")
    except NumericError as exc:
        if log_fh:
            log_fh.write(_dump({"epoch": epoch, "error": str(exc)}) + "\n")
        raise
    finally:
        if log_fh:
            log_fh.close()

    if out is not None:
        save_checkpoint(params, out / "model.ckpt")
    return TrainResult(params, records)


def evaluate_model(cfg: ExperimentConfig, seed: int, params: EmbedderParams) -> EvalReport:
    _, test_set, split = prepare_data(cfg, seed)
    return evaluate(params, test_set, split)


def train_and_eval(cfg: ExperimentConfig, seed: int) -> EvalReport:
    res = train(cfg, seed)
    return evaluate_model(cfg, seed, res.params)


def sweep_epsilon(cfg: ExperimentConfig, epsilons=DEFAULT_EPSILON_GRID, seeds=None) -> list[dict]:
    """One ATE train + eval per (epsilon, seed)."""
    if not epsilons:
        raise ConfigError("epsilon list must not be empty")
    seeds = cfg.train.seeds if seeds is None else seeds
    rows = []
    for eps in epsilons:
        run_cfg = replace(cfg, loss=replace(cfg.loss, name="ate", epsilon_a=float(eps)))
        for seed in seeds:
            rep = train_and_eval(run_cfg, seed)
            rows.append({"epsilon": eps, "seed": seed, "rank1": rep.rank(1), "map": rep.map})
    return rows


def rows_to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    return buf.getvalue()


def parse_loss_spec(spec: str, cfg: ExperimentConfig) -> ExperimentConfig:
    """``name`` or ``name:key=value,key=value`` applied to the loss section."""
    name, _, rest = spec.partition(":")
    pairs = {"loss.name": name.strip()}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        k, _, v = item.partition("=")
        pairs[f"loss.{k.strip()}"] = v.strip()
    return cfg.with_overrides(pairs)


def compare_losses(cfg: ExperimentConfig, loss_specs: list[str], seeds=None) -> tuple[list[dict], list[dict]]:
    """Train every loss under identical seeds, data and mining.

    Returns (per-seed rows, per-loss median rows).
    """
    if len(loss_specs) < 2:
        raise ConfigError("compare needs at least two losses")
    seeds = cfg.train.seeds if seeds is None else seeds
    rows, medians = [], []
    for spec in loss_specs:
        run_cfg = parse_loss_spec(spec, cfg)
        mine = []
        for seed in seeds:
            rep = train_and_eval(run_cfg, seed)
            mine.append({"loss": spec, "seed": seed, "rank1": rep.rank(1), "map": rep.map})
        rows += mine
        medians.append({"loss": spec, "seed": "median",
                        "rank1": statistics.median(r["rank1"] for r in mine),
                        "map": statistics.median(r["map"] for r in mine)})
    return rows, medians


def format_table(rows: list[dict]) -> str:
    lines = [f"{'loss':<28} {'seed':>6} {'rank1':>8} {'mAP':>8}"]
    for r in rows:
        lines.append(f"{r['loss']:<28} {str(r['seed']):>6} {r['rank1']:>8.4f} {r['map']:>8.4f}")
    return "\n".join(lines) + "\n"
