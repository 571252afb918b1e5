"""Synthetic POI/post corpora with planted location signal.

Every channel the model can read carries some signal: the post text holds a
POI-specific keyword with probability ``keyword_prob``, the posting source
and the hour of day are drawn from POI-specific preferences, and the rest is
background noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timedelta, timezone

import numpy as np

from .data import EARTH_RADIUS_M, Poi, Post, haversine

SOURCES = (
    "Twitter for iPhone",
    "Twitter for Android",
    "Twitter Web App",
    "Instagram",
    "Foursquare",
    "TweetDeck",
)
SUBURBS = ("Melbourne", "Carlton", "Fitzroy", "Southbank", "Docklands", "Richmond", "St Kilda", "Collingwood")


@dataclass
class SynthConfig:
    n_pois: int = 30
    n_themes: int = 4
    n_subthemes: int = 8
    posts_per_poi: int = 100
    keyword_prob: float = 0.6
    vocab_size: int = 200
    # south, west, north, east (degrees); defaults cover central Melbourne
    bbox: tuple[float, float, float, float] = (-37.835, 144.935, -37.790, 144.995)
    scatter_radius_m: float = 50.0
    min_spacing_m: float = 250.0
    source_prob: float = 0.7
    hour_prob: float = 0.7
    seed: int = 7

    def validate(self) -> None:
        if not 1 <= self.n_themes <= self.n_subthemes <= self.n_pois:
            raise ValueError("need 1 <= n_themes <= n_subthemes <= n_pois")
        if self.posts_per_poi < 1 or self.vocab_size < 1:
            raise ValueError("posts_per_poi and vocab_size must be positive")
        if not 0.0 <= self.keyword_prob <= 1.0:
            raise ValueError("keyword_prob must lie in [0, 1]")
        if not 0.0 < self.scatter_radius_m < 100.0:
            raise ValueError("scatter_radius_m must lie in (0, 100) so labelling recovers the planted POI")
        if self.min_spacing_m < 2 * self.scatter_radius_m + 100.0:
            raise ValueError("min_spacing_m too small for unambiguous labelling")
        south, west, north, east = self.bbox
        if not (south < north and west < east):
            raise ValueError(f"degenerate bounding box {self.bbox}")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SynthConfig keys: {sorted(unknown)}")
        d = dict(d)
        if "bbox" in d:
            d["bbox"] = tuple(float(x) for x in d["bbox"])
        return cls(**d)


def _place_pois(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    south, west, north, east = cfg.bbox
    placed: list[tuple[float, float]] = []
    attempts = 0
    limit = 2000 * cfg.n_pois
    while len(placed) < cfg.n_pois:
        attempts += 1
        if attempts > limit:
            raise ValueError(
                f"bounding box too small to place {cfg.n_pois} POIs at least {cfg.min_spacing_m} m apart"
            )
        lat, lon = rng.uniform(south, north), rng.uniform(west, east)
        if placed:
            arr = np.array(placed)
            if np.min(haversine(lat, lon, arr[:, 0], arr[:, 1])) < cfg.min_spacing_m:
                continue
        placed.append((lat, lon))
    return np.array(placed)


def _assign(n_items: int, n_groups: int, rng: np.random.Generator) -> np.ndarray:
    """Map items to groups so that every group gets at least one item."""
    groups = np.concatenate([np.arange(n_groups), rng.integers(0, n_groups, n_items - n_groups)])
    rng.shuffle(groups)
    return groups


def _scatter(lat: float, lon: float, radius_m: float, rng: np.random.Generator) -> tuple[float, float]:
    r = radius_m * math.sqrt(rng.random())
    bearing = rng.uniform(0.0, 2 * math.pi)
    dlat = r * math.cos(bearing) / EARTH_RADIUS_M
    dlon = r * math.sin(bearing) / (EARTH_RADIUS_M * math.cos(math.radians(lat)))
    return lat + math.degrees(dlat), lon + math.degrees(dlon)


def _words(rng: np.random.Generator, vocab: list[str], weights: np.ndarray, lo: int, hi: int) -> list[str]:
    n = int(rng.integers(lo, hi + 1))
    return [vocab[i] for i in rng.choice(len(vocab), size=n, p=weights)]


def gen_synthetic(cfg: SynthConfig) -> tuple[list[Poi], list[Post]]:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    coords = _place_pois(cfg, rng)
    sub_theme = _assign(cfg.n_subthemes, cfg.n_themes, rng)
    poi_sub = _assign(cfg.n_pois, cfg.n_subthemes, rng)

    pois = []
    keywords = []
    for i in range(cfg.n_pois):
        s = int(poi_sub[i])
        pois.append(
            Poi(
                id=f"poi{i:03d}",
                name=f"Place {i}",
                theme=f"theme{int(sub_theme[s]):02d}",
                subtheme=f"sub{s:02d}",
                lat=round(float(coords[i, 0]), 7),
                lon=round(float(coords[i, 1]), 7),
            )
        )
        keywords.append(f"kw{i:03d}")
    pref_source = rng.integers(0, len(SOURCES), cfg.n_pois)
    pref_hour = rng.integers(0, 24, cfg.n_pois)

    vocab = [f"w{j}" for j in range(cfg.vocab_size)]
    zipf = 1.0 / np.arange(1, cfg.vocab_size + 1)
    zipf /= zipf.sum()
    epoch = datetime(2019, 1, 1, tzinfo=timezone.utc)

    owners = np.repeat(np.arange(cfg.n_pois), cfg.posts_per_poi)
    rng.shuffle(owners)
    posts = []
    for idx, i in enumerate(owners):
        poi = pois[i]
        words = _words(rng, vocab, zipf, 4, 12)
        if rng.random() < cfg.keyword_prob:
            words.insert(int(rng.integers(0, len(words) + 1)), keywords[i])
        source = SOURCES[pref_source[i]] if rng.random() < cfg.source_prob else SOURCES[rng.integers(len(SOURCES))]
        if rng.random() < cfg.hour_prob:
            hour = int((pref_hour[i] + rng.integers(-1, 2)) % 24)
        else:
            hour = int(rng.integers(0, 24))
        day = epoch + timedelta(days=int(rng.integers(0, 730)))
        ts = day.replace(hour=hour, minute=int(rng.integers(0, 60)), second=int(rng.integers(0, 60)))
        lat, lon = _scatter(poi.lat, poi.lon, cfg.scatter_radius_m, rng)
        posts.append(
            Post(
                id=f"p{idx:06d}",
                text=" ".join(words),
                user_location=SUBURBS[rng.integers(len(SUBURBS))],
                user_description=" ".join(_words(rng, vocab, zipf, 2, 6)),
                source=source,
                created_at=ts.strftime("%Y-%m-%dT%H:%M:%SZ"),
                lat=round(lat, 7),
                lon=round(lon, 7),
                label=poi.id,
            )
        )
    return pois, posts


def serialize(pois: list[Poi], posts: list[Post]) -> str:
    """Canonical text form, used for determinism checks."""
    head = json.dumps([asdict(p) for p in pois], sort_keys=True)
    body = "\n".join(json.dumps(p.to_json(), sort_keys=True) for p in posts)
    return head + "\n" + body + "\n"
