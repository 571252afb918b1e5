"""acc@k and distance-error metrics, evaluated at POI level."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import Poi, haversine

KS = (1, 5, 10, 20)


@dataclass(frozen=True)
class MetricsReport:
    acc1: float
    acc5: float
    acc10: float
    acc20: float
    mean_distance_m: float
    median_distance_m: float
    n_examples: int

    def acc(self, k: int) -> float:
        return getattr(self, f"acc{k}")

    def as_dict(self) -> dict:
        return asdict(self)


def acc_at_k(rankings: Sequence[Sequence], labels: Sequence, k: int) -> float:
    """Fraction of examples whose label is among the first ``k`` ranked entries."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(rankings) == 0:
        raise ValueError("acc_at_k on empty input")
    if len(rankings) != len(labels):
        raise ValueError(f"{len(rankings)} rankings for {len(labels)} labels")
    hits = 0
    for ranking, label in zip(rankings, labels):
        if len(ranking) < k:
            raise ValueError(f"ranking has {len(ranking)} entries, fewer than k={k}")
        hits += label in list(ranking[:k])
    return hits / len(rankings)


def distance_errors(
    predicted: Sequence[str], actual: Sequence[str], coords: Mapping[str, tuple[float, float]]
) -> tuple[float, float]:
    """Mean and median haversine distance between predicted and true POIs, in meters."""
    if len(predicted) != len(actual):
        raise ValueError("predicted and actual differ in length")
    if not predicted:
        raise ValueError("distance_errors on empty input")
    for pid in list(predicted) + list(actual):
        if pid not in coords:
            raise KeyError(f"unknown POI id {pid!r}")
    a = np.array([coords[p] for p in predicted])
    b = np.array([coords[p] for p in actual])
    d = haversine(a[:, 0], a[:, 1], b[:, 0], b[:, 1])
    return float(np.mean(d)), float(np.median(d))


def poi_coords(pois: Sequence[Poi]) -> dict[str, tuple[float, float]]:
    return {p.id: (p.lat, p.lon) for p in pois}


def metrics_report(
    rankings: Sequence[Sequence[str]], labels: Sequence[str], coords: Mapping[str, tuple[float, float]]
) -> MetricsReport:
    # rankings cover every class, so k beyond their length behaves like k = length
    width = min(len(r) for r in rankings) if rankings else 1
    accs = [acc_at_k(rankings, labels, min(k, width)) for k in KS]
    mean_d, median_d = distance_errors([r[0] for r in rankings], labels, coords)
    return MetricsReport(*accs, mean_d, median_d, len(labels))
