"""Time representations: UniHier, time-as-text and one-hot."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from . import layers
from . import numerics as nx
from .layers import Params
from .numerics import Tensor

UNIHIER_VOCAB = 60
ELEMENT_RANGES = {"minute": 60, "hour": 24, "weekday": 7, "month": 12}
DEFAULT_ELEMENTS = ("hour", "weekday", "month")
ONEHOT_OFFSETS = {"hour": 0, "weekday": 24, "month": 31}
ONEHOT_WIDTH = 24 + 7 + 12


@dataclass(frozen=True)
class TimeElements:
    minute: int
    hour: int
    weekday: int
    month: int

    def __post_init__(self):
        for name, size in ELEMENT_RANGES.items():
            value = getattr(self, name)
            if not 0 <= value < size:
                raise ValueError(f"{name}={value} outside [0, {size})")


def parse_timestamp(ts: str) -> datetime:
    """Parse ISO-8601; naive timestamps are taken as UTC."""
    if not isinstance(ts, str):
        raise ValueError(f"timestamp must be a string, got {type(ts).__name__}")
    text = ts.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(text)
    except ValueError as exc:
        raise ValueError(f"unparseable timestamp {ts!r}") from exc
    if "T" not in text and " " not in text:
        raise ValueError(f"timestamp {ts!r} has no time component")
    if dt.tzinfo is None:
        return dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def decompose_timestamp(ts: str) -> TimeElements:
    dt = parse_timestamp(ts)
    return TimeElements(minute=dt.minute, hour=dt.hour, weekday=dt.weekday(), month=dt.month - 1)


def time_as_text(ts: str) -> str:
    dt = parse_timestamp(ts)
    return f"y{dt.year} m{dt.month} d{dt.day} h{dt.hour} min{dt.minute} w{dt.weekday()}"


def init_unihier(
    params: Params,
    hidden: int,
    rng: np.random.Generator,
    elements=DEFAULT_ELEMENTS,
    prefix: str = "time.unihier",
) -> None:
    for el in elements:
        if el not in ELEMENT_RANGES:
            raise ValueError(f"unknown time element {el!r}")
        layers.uniform(params, f"{prefix}.{el}", (UNIHIER_VOCAB, hidden), rng, scale=1.0)


def element_indices(elements_list: list[TimeElements], name: str) -> np.ndarray:
    return np.array([getattr(el, name) for el in elements_list], dtype=np.int64)


def unihier_embed(
    elements_list: list[TimeElements], params: Params, elements=DEFAULT_ELEMENTS, prefix: str = "time.unihier"
) -> Tensor:
    """Sum of per-element embedding rows; shape (B, H)."""
    out = None
    for el in elements:
        row = nx.embed_lookup(params[f"{prefix}.{el}"], element_indices(elements_list, el))
        out = row if out is None else nx.add(out, row)
    if out is None:
        raise ValueError("UniHier needs at least one enabled element")
    return out


def one_hot_matrix(elements_list: list[TimeElements]) -> np.ndarray:
    """(B, 43) matrix with ones at hour, 24+weekday and 31+month."""
    out = np.zeros((len(elements_list), ONEHOT_WIDTH))
    rows = np.arange(len(elements_list))
    for name, offset in ONEHOT_OFFSETS.items():
        out[rows, offset + element_indices(elements_list, name)] = 1.0
    return out


def init_time_onehot(params: Params, hidden: int, rng: np.random.Generator, prefix: str = "time.onehot") -> None:
    layers.uniform(params, f"{prefix}.proj", (ONEHOT_WIDTH, hidden), rng)


def time_one_hot(elements_list: list[TimeElements], params: Params, prefix: str = "time.onehot") -> Tensor:
    return nx.matmul(one_hot_matrix(elements_list), params[f"{prefix}.proj"])
