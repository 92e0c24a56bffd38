"""End-to-end runs: data preparation, training, evaluation, sweeps and ablations."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import checkpoint_meta, load_checkpoint, save_frozen, save_latent
from .config import DataConfig, ModelConfig, RunConfig
from .data import Dataset, encode, read_tsv, synthetic_splits
from .embedding import Vocabulary
from .evaluation import (NO_EE, run_eval, sweep_delta, write_csv, write_eval_artifacts,
                         write_sweep_artifacts)
from .model import BEExformer, FrozenModel
from .training import TrainResult, train

log = logging.getLogger(__name__)

DEFAULT_SWEEP = (1e-5, 1e-4, 1e-3, 1e-2)


def load_datasets(data: DataConfig) -> tuple[Dataset, Dataset]:
    data.validate()
    if data.train_path:
        train_set = read_tsv(data.train_path, data.text_columns, data.label_column)
        dev_set = read_tsv(data.dev_path, data.text_columns, data.label_column) if data.dev_path else train_set
        return train_set, dev_set
    return synthetic_splits(data.synthetic, data.num_train, data.num_dev, data.data_seed)


@dataclass
class Prepared:
    vocab: Vocabulary
    model: ModelConfig
    train_ids: np.ndarray
    train_labels: np.ndarray
    dev_ids: np.ndarray
    dev_labels: np.ndarray
    dataset: str


def prepare(cfg: RunConfig, vocab: Vocabulary | None = None) -> Prepared:
    train_set, dev_set = load_datasets(cfg.data)
    if vocab is None:
        vocab = Vocabulary.build(train_set.texts(), include_sep=train_set.is_pair)
    num_classes = max(train_set.num_classes, dev_set.num_classes, cfg.model.num_classes)
    model_cfg = dataclasses.replace(cfg.model, vocab_size=vocab.size, num_classes=num_classes)
    max_len = model_cfg.max_len
    tr_ids, tr_y = encode(train_set, vocab, max_len)
    dv_ids, dv_y = encode(dev_set, vocab, max_len)
    return Prepared(vocab, model_cfg, tr_ids, tr_y, dv_ids, dv_y, train_set.name)


def train_run(cfg: RunConfig, out_dir=None, figures: bool = True) -> tuple[TrainResult, Prepared]:
    """Train from a config; with ``out_dir`` also write vocab, logs, both checkpoints and figures."""
    prep = prepare(cfg)
    model = BEExformer(prep.model, seed=cfg.train.seed)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        prep.vocab.save(out / "vocab.tsv")
    result = train(model, prep.train_ids, prep.train_labels, prep.dev_ids, prep.dev_labels,
                   cfg.train, log_path=out / "train_log.jsonl" if out else None)
    if out:
        meta = {"vocab": [prep.vocab.decode(i) for i in range(1, prep.vocab.size + 1)],
                "best_epoch": result.best_epoch, "best_metric": result.best_metric,
                "run_config": cfg.to_dict()}
        save_latent(model, out / "latent.ckpt", meta)
        save_frozen(model.freeze(), out / "frozen.ckpt", meta)
        (out / "summary.json").write_text(json.dumps({
            "dataset": prep.dataset, "best_epoch": result.best_epoch, "best_metric": result.best_metric,
            "epochs_run": len(result.reports), "metric": cfg.train.metric,
        }, indent=2), encoding="utf-8")
        if figures and result.reports:
            from .plotting import plot_training
            plot_training(result.reports, out / "training.png")
    return result, prep


def load_model_and_vocab(checkpoint, vocab_path=None) -> tuple[BEExformer | FrozenModel, Vocabulary]:
    model = load_checkpoint(checkpoint)
    if vocab_path:
        return model, Vocabulary.load(vocab_path)
    tokens = checkpoint_meta(checkpoint).get("vocab")
    if tokens is None:
        sibling = Path(checkpoint).with_name("vocab.tsv")
        return model, Vocabulary.load(sibling)
    return model, Vocabulary(tokens)


def eval_data(model, vocab: Vocabulary, cfg: RunConfig) -> tuple[np.ndarray, np.ndarray, str]:
    _, dev_set = load_datasets(cfg.data)
    ids, labels = encode(dev_set, vocab, model.config.max_len)
    return ids, labels, dev_set.name


def _context(model, packed: bool):
    if isinstance(model, FrozenModel):
        return model.context(packed=packed)
    return model.context()


def eval_run(model, vocab: Vocabulary, cfg: RunConfig, delta: float, out_dir=None,
             packed: bool = False, figures: bool = True):
    ids, labels, name = eval_data(model, vocab, cfg)
    report, traces = run_eval(model, ids, labels, delta, name, cfg.train.metric, ctx=_context(model, packed))
    if out_dir:
        write_eval_artifacts(report, traces, model.config, out_dir, figures)
    return report, traces


def sweep_run(model, vocab: Vocabulary, cfg: RunConfig, deltas: Sequence[float] = DEFAULT_SWEEP,
              out_dir=None, packed: bool = False, figures: bool = True):
    ids, labels, name = eval_data(model, vocab, cfg)
    reports = sweep_delta(model, ids, labels, deltas, name, cfg.train.metric, ctx=_context(model, packed))
    if out_dir:
        write_sweep_artifacts(reports, out_dir, figures)
    return reports


ABLATIONS = {
    "proposed": {},
    "clip": {"binarizer": "clip"},
    "wee": {"early_exit": False},
    "wslfn": {"use_slfn": False},
}


def ablate_run(cfg: RunConfig, variants: Sequence[str] = tuple(ABLATIONS), out_dir=None,
               figures: bool = True) -> list[dict]:
    """Train and evaluate each model variant on the same data and seed."""
    rows = []
    for variant in variants:
        changes = ABLATIONS[variant]
        vcfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, **changes))
        sub = Path(out_dir) / variant if out_dir else None
        result, prep = train_run(vcfg, sub, figures=False)
        delta = vcfg.train.delta if vcfg.model.early_exit else NO_EE
        report, _ = run_eval(result.model, prep.dev_ids, prep.dev_labels, delta, prep.dataset, vcfg.train.metric)
        rows.append({
            "variant": variant,
            "metric_name": vcfg.train.metric,
            "metric": report.metric,
            "best_epoch": result.best_epoch,
            "mean_exit": report.mean_exit,
            "ee_gflops": report.ee.nominal / 1e9,
            "reduction": report.reduction,
            "parameters": result.model.num_parameters(),
        })
        log.info("ablation %s: %s %.4f", variant, vcfg.train.metric, report.metric)
    if out_dir:
        out = Path(out_dir)
        write_csv(rows, out / "ablation.csv")
        if figures:
            from .plotting import plot_ablation, plot_binarizers
            plot_ablation(rows, out / "ablation.png")
            plot_binarizers(out / "binarizers.png")
    return rows
