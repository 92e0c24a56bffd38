"""Early-exit evaluation reports, delta sweeps and their on-disk artifacts."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .accounting import (FLOP_CONVENTION, FlopsLedger, count_flops, mean_ledger, params_saved,
                         reduction)
from .exits import ExitTrace, apply_exit_rule, exit_traces, fractional_reduction
from .training import score

NO_EE = float("-inf")


@dataclass
class RunReport:
    dataset: str
    metric_name: str
    metric: float
    delta: float
    num_samples: int
    histogram: dict[int, int]
    params_saved: int
    wee: FlopsLedger
    ee: FlopsLedger
    early_exit: bool = True
    extra: dict = field(default_factory=dict)

    @property
    def mean_exit(self) -> float:
        return sum(c * n for c, n in self.histogram.items()) / self.num_samples

    @property
    def reduction(self) -> float:
        return reduction(self.wee, self.ee)

    @property
    def reduction_adjusted(self) -> float:
        return reduction(self.wee, self.ee, adjusted=True)

    def params_saved_by_exit(self, cfg) -> dict[int, int]:
        return {c: n * params_saved(cfg, c) for c, n in self.histogram.items()}

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "metric_name": self.metric_name,
            "metric": self.metric,
            "delta": None if self.delta == NO_EE else self.delta,
            "early_exit": self.early_exit,
            "num_samples": self.num_samples,
            "mean_exit": self.mean_exit,
            "histogram": {str(c): n for c, n in self.histogram.items()},
            "params_saved": self.params_saved,
            "wee_flops": self.wee.to_json(),
            "ee_flops": self.ee.to_json(),
            "wee_gflops": self.wee.nominal / 1e9,
            "ee_gflops": self.ee.nominal / 1e9,
            "reduction": self.reduction,
            "reduction_adjusted": self.reduction_adjusted,
            "flops_convention": FLOP_CONVENTION,
            **self.extra,
        }

    @classmethod
    def from_json(cls, data: dict) -> "RunReport":
        # stored percentages are ignored; reductions are recomputed from the ledgers
        delta = data["delta"]
        return cls(
            dataset=data["dataset"],
            metric_name=data["metric_name"],
            metric=data["metric"],
            delta=NO_EE if delta is None else delta,
            num_samples=data["num_samples"],
            histogram={int(c): n for c, n in data["histogram"].items()},
            params_saved=data["params_saved"],
            wee=FlopsLedger.from_json(data["wee_flops"]),
            ee=FlopsLedger.from_json(data["ee_flops"]),
            early_exit=data.get("early_exit", True),
        )


def report_from_exits(cfg, exit_blocks: Sequence[int], labels, predictions, delta: float,
                      dataset: str = "eval", metric_name: str = "accuracy",
                      early_exit: bool = True, seq_len: int | None = None) -> RunReport:
    """Build a report from per-sample exit blocks; all accounting goes through the ledgers."""
    exit_blocks = [int(c) for c in exit_blocks]
    histogram = {c: 0 for c in range(1, cfg.num_blocks + 1)}
    for c in exit_blocks:
        histogram[c] += 1
    wee = count_flops(cfg, None, seq_len)
    if early_exit:
        ee = mean_ledger([count_flops(cfg, c, seq_len) for c in exit_blocks])
    else:
        ee = wee
    saved = sum(params_saved(cfg, c) for c in exit_blocks)
    return RunReport(dataset, metric_name, score(metric_name, labels, predictions), delta,
                     len(exit_blocks), histogram, saved, wee, ee, early_exit)


def _traces(cfg, entropies, logits, pos, seq_len) -> list[ExitTrace]:
    traces = []
    prev0 = float(np.log(cfg.num_classes))
    blocks = cfg.exit_blocks
    early = len(blocks) > 1
    for row_s, row_z, p in zip(entropies, logits, pos):
        seen = [float(s) for s in row_s[: p + 1]]
        prevs = [prev0, *seen[:-1]]
        ledger = count_flops(cfg, blocks[p] if early else None, seq_len)
        traces.append(ExitTrace(seen, [fractional_reduction(a, b) for a, b in zip(prevs, seen)],
                                int(blocks[p]), row_z[p].tolist(), ledger.nominal, ledger.adjusted))
    return traces


def evaluate_traces(model, entropies, logits, labels, delta: float, dataset: str = "eval",
                    metric_name: str = "accuracy") -> tuple[RunReport, list[ExitTrace]]:
    cfg = model.config
    early = len(cfg.exit_blocks) > 1 and delta != NO_EE
    if early:
        pos = apply_exit_rule(entropies, cfg.num_classes, delta)
    else:
        pos = np.full(len(entropies), len(cfg.exit_blocks) - 1)
    preds = logits[np.arange(len(pos)), pos].argmax(axis=-1)
    blocks = np.asarray(cfg.exit_blocks)[pos]
    report = report_from_exits(cfg, blocks, labels, preds, delta, dataset, metric_name, early)
    return report, _traces(cfg, entropies, logits, pos, None)


def run_eval(model, ids, labels, delta: float, dataset: str = "eval", metric_name: str = "accuracy",
             ctx=None) -> tuple[RunReport, list[ExitTrace]]:
    """Evaluate with early exit at threshold ``delta`` (``NO_EE`` disables exiting)."""
    entropies, logits = exit_traces(model, ids, ctx)
    return evaluate_traces(model, entropies, logits, labels, delta, dataset, metric_name)


def sweep_delta(model, ids, labels, deltas: Sequence[float], dataset: str = "eval",
                metric_name: str = "accuracy", ctx=None) -> list[RunReport]:
    """One full-depth pass, then the exit rule re-applied for every threshold."""
    entropies, logits = exit_traces(model, ids, ctx)
    return [evaluate_traces(model, entropies, logits, labels, d, dataset, metric_name)[0] for d in deltas]


def sweep_rows(reports: Sequence[RunReport]) -> list[dict]:
    return [{
        "delta": r.delta,
        "metric": r.metric,
        "mean_exit": r.mean_exit,
        "wee_gflops": r.wee.nominal / 1e9,
        "ee_gflops": r.ee.nominal / 1e9,
        "reduction": r.reduction,
        "reduction_adjusted": r.reduction_adjusted,
    } for r in reports]


def write_csv(rows: Sequence[dict], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def histogram_rows(report: RunReport, cfg) -> list[dict]:
    saved = report.params_saved_by_exit(cfg)
    return [{"exit": c, "count": n, "fraction": n / report.num_samples, "params_saved": saved[c]}
            for c, n in report.histogram.items()]


def write_eval_artifacts(report: RunReport, traces: Sequence[ExitTrace], cfg, out_dir,
                         figures: bool = True) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.json", "traces": out / "exits.jsonl", "histogram": out / "histogram.csv"}
    paths["report"].write_text(json.dumps(report.to_json(), indent=2), encoding="utf-8")
    with paths["traces"].open("w", encoding="utf-8") as fh:
        for i, t in enumerate(traces):
            fh.write(json.dumps({"sample": i, **t.to_json()}) + "\n")
    write_csv(histogram_rows(report, cfg), paths["histogram"])
    if figures:
        from .plotting import plot_exit_histogram
        paths["figure"] = plot_exit_histogram(report, cfg, out / "exit_histogram.png")
    return paths


def write_sweep_artifacts(reports: Sequence[RunReport], out_dir, figures: bool = True) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"table": out / "sweep.csv"}
    write_csv(sweep_rows(reports), paths["table"])
    if figures:
        from .plotting import plot_sweep
        paths["figure"] = plot_sweep(reports, out / "sweep.png")
    return paths
