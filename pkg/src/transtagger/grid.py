"""Representation-combination x ablation experiment grid."""

from __future__ import annotations

import csv
import io
import logging
import time
import traceback
from dataclasses import dataclass, field, replace
from typing import Sequence

from .config import RunConfig
from .data import Poi, Post
from .metrics import MetricsReport
from .training import evaluate, train

log = logging.getLogger(__name__)

# (ct_mode, time_mode), in table order
COMBINATIONS = [
    ("text", "text"),
    ("onehot", "text"),
    ("text", "onehot"),
    ("onehot", "onehot"),
    ("text", "unihier"),
    ("onehot", "unihier"),
]
ABLATIONS = ("full", "w/o transformer", "w/o position")
METRIC_COLUMNS = ("acc1", "acc5", "acc10", "acc20", "mean_distance_m", "median_distance_m")


def combination_name(ct_mode: str, time_mode: str) -> str:
    ct = {"text": "Text", "onehot": "1Hot"}[ct_mode]
    tm = {"text": "Text", "onehot": "1Hot", "unihier": "UniHier"}[time_mode]
    return f"{ct}-{tm}"


def cell_config(base: RunConfig, ct_mode: str, time_mode: str, ablation: str, seed: int) -> RunConfig:
    schema = replace(base.schema, ct_mode=ct_mode, time_mode=time_mode)
    fusion = replace(base.fusion)
    if ablation == "w/o transformer":
        fusion = replace(fusion, use_fusion_encoder=False, position_mode="concat")
    elif ablation == "w/o position":
        fusion = replace(fusion, use_fusion_encoder=True, position_mode="add")
    elif ablation == "full":
        fusion = replace(fusion, use_fusion_encoder=True, position_mode="concat")
    else:
        raise ValueError(f"unknown ablation {ablation!r}")
    return replace(base, schema=schema, fusion=fusion, seed=seed)


@dataclass
class GridCell:
    combination: str
    ablation: str
    metrics: MetricsReport | None = None
    error: str | None = None
    seconds: float = 0.0
    # set when the cell duplicates another with an identical effective config
    same_as: str | None = None


@dataclass
class GridReport:
    cells: dict[tuple[str, str], GridCell] = field(default_factory=dict)

    def rows(self, ablation: str) -> list[GridCell]:
        return [c for (_, abl), c in self.cells.items() if abl == ablation]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["ablation", "combination", *METRIC_COLUMNS, "n_examples", "status"])
        for cell in self.cells.values():
            if cell.metrics is None:
                writer.writerow([cell.ablation, cell.combination, *[""] * len(METRIC_COLUMNS), "", f"failed: {cell.error}"])
            else:
                m = cell.metrics.as_dict()
                writer.writerow(
                    [cell.ablation, cell.combination, *[f"{m[k]:.6f}" for k in METRIC_COLUMNS], m["n_examples"], "ok"]
                )
        return buf.getvalue()

    def to_text(self) -> str:
        header = f"{'Combination':<16}" + "".join(f"{h:>10}" for h in ("acc@1", "acc@5", "acc@10", "acc@20", "mean(m)", "median(m)"))
        lines = []
        for ablation in ABLATIONS:
            cells = self.rows(ablation)
            if not cells:
                continue
            lines += [f"[{ablation}]", header, "-" * len(header)]
            for cell in cells:
                if cell.metrics is None:
                    lines.append(f"{cell.combination:<16}  FAILED: {cell.error}")
                    continue
                m = cell.metrics
                lines.append(
                    f"{cell.combination:<16}"
                    + "".join(f"{100 * v:>10.2f}" for v in (m.acc1, m.acc5, m.acc10, m.acc20))
                    + f"{m.mean_distance_m:>10.1f}{m.median_distance_m:>10.1f}"
                )
            lines.append("")
        return "\n".join(lines)


def _effective_key(cfg: RunConfig) -> str:
    # with no CT fields the CT representation cannot influence the model
    schema = cfg.schema if cfg.schema.ct_fields else replace(cfg.schema, ct_mode="-")
    return repr((schema, cfg.fusion, cfg.encoder))


def run_grid(
    base: RunConfig,
    train_posts: Sequence[Post],
    val_posts: Sequence[Post],
    pois: Sequence[Poi],
    ablations: Sequence[str] = ABLATIONS,
    combinations: Sequence[tuple[str, str]] = COMBINATIONS,
) -> GridReport:
    """Train and evaluate every (combination, ablation) cell on ``val_posts``.

    Cell ``i`` trains with seed ``base.seed + i``.  A failing cell is recorded
    and the grid moves on.
    """
    report = GridReport()
    done: dict[str, GridCell] = {}
    index = 0
    for ablation in ablations:
        for ct_mode, time_mode in combinations:
            name = combination_name(ct_mode, time_mode)
            cfg = cell_config(base, ct_mode, time_mode, ablation, base.seed + index)
            index += 1
            key = _effective_key(cfg)
            if key in done:
                prior = done[key]
                report.cells[(name, ablation)] = replace(
                    prior, combination=name, ablation=ablation, same_as=prior.combination
                )
                continue
            cell = GridCell(name, ablation)
            start = time.perf_counter()
            try:
                result = train(cfg, train_posts, val_posts, pois)
                cell.metrics = evaluate(result.tagger, val_posts)
            except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the grid
                cell.error = f"{type(exc).__name__}: {exc}"
                log.error("grid cell %s / %s failed:\n%s", name, ablation, traceback.format_exc())
            cell.seconds = time.perf_counter() - start
            log.info("grid cell %s / %s: %s (%.1fs)", name, ablation, cell.metrics or cell.error, cell.seconds)
            report.cells[(name, ablation)] = cell
            done[key] = cell
    return report
