"""Posts and POIs: file formats, proximity labelling and dataset splits."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
LABEL_RADIUS_M = 100.0

TEXT_KEYS = ("text", "user_location", "user_description", "source")
REQUIRED_POST_KEYS = ("id", "created_at", "lat", "lon")


class DataError(ValueError):
    pass


def _check_coords(lat: float, lon: float, what: str) -> None:
    if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
        raise DataError(f"{what}: invalid coordinates ({lat}, {lon})")


@dataclass
class Post:
    id: str
    text: str
    user_location: str
    user_description: str
    source: str
    created_at: str
    lat: float
    lon: float
    label: str | None = None

    def __post_init__(self):
        _check_coords(self.lat, self.lon, f"post {self.id}")

    def field(self, name: str) -> str:
        try:
            return getattr(self, name)
        except AttributeError:
            raise KeyError(f"post {self.id} has no field {name!r}") from None

    def to_json(self) -> dict:
        d = asdict(self)
        if d["label"] is None:
            del d["label"]
        return d


@dataclass
class Poi:
    id: str
    name: str
    theme: str
    subtheme: str
    lat: float
    lon: float

    def __post_init__(self):
        _check_coords(self.lat, self.lon, f"POI {self.id}")


def post_from_dict(obj: dict, where: str = "") -> Post:
    if not isinstance(obj, dict):
        raise DataError(f"{where}expected a JSON object")
    missing = [k for k in REQUIRED_POST_KEYS if k not in obj]
    if missing:
        raise DataError(f"{where}missing key(s) {', '.join(missing)}")
    kwargs = {k: str(obj.get(k) or "") for k in TEXT_KEYS}
    label = obj.get("label")
    try:
        return Post(
            id=str(obj["id"]),
            created_at=str(obj["created_at"]),
            lat=float(obj["lat"]),
            lon=float(obj["lon"]),
            label=None if label is None else str(label),
            **kwargs,
        )
    except (TypeError, ValueError) as exc:
        raise DataError(f"{where}{exc}") from exc


def load_posts(path: str | Path) -> list[Post]:
    posts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            posts.append(post_from_dict(obj, where=f"{path}:{lineno}: "))
    return posts


def save_posts(posts: Iterable[Post], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in posts:
            fh.write(json.dumps(p.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def load_pois(path: str | Path) -> list[Poi]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise DataError(f"{path}: POI file must hold a JSON array")
    pois = []
    for i, obj in enumerate(raw):
        try:
            pois.append(
                Poi(
                    id=str(obj["id"]),
                    name=str(obj.get("name", obj["id"])),
                    theme=str(obj["theme"]),
                    subtheme=str(obj["subtheme"]),
                    lat=float(obj["lat"]),
                    lon=float(obj["lon"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: POI #{i}: {exc}") from exc
    return pois


def save_pois(pois: Iterable[Poi], path: str | Path) -> None:
    Path(path).write_text(json.dumps([asdict(p) for p in pois], indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


def haversine(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters; accepts scalars or numpy arrays."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dlat = p2 - p1
    dlon = np.radians(lon2) - np.radians(lon1)
    a = np.sin(dlat / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlon / 2) ** 2
    d = 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    return float(d) if np.ndim(d) == 0 else d


def label_posts(posts: Sequence[Post], pois: Sequence[Poi], radius_m: float = LABEL_RADIUS_M) -> list[Post]:
    """Label each post with its nearest POI if closer than ``radius_m``; drop the rest.

    Ties go to the POI with the smallest id.  Returns new Post objects.
    """
    if not pois:
        raise DataError("label_posts needs at least one POI")
    ordered = sorted(pois, key=lambda p: p.id)
    plat = np.array([p.lat for p in ordered])
    plon = np.array([p.lon for p in ordered])
    out = []
    for post in posts:
        d = haversine(post.lat, post.lon, plat, plon)
        best = int(np.argmin(d))  # first minimum, i.e. smallest id
        if d[best] < radius_m:
            out.append(replace(post, label=ordered[best].id))
    return out


def split(
    posts: Sequence[Post], ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0
) -> list[list[Post]]:
    """Seeded, POI-stratified partition with exact largest-remainder split sizes.

    Within each class the posts are shuffled and spread evenly along a global
    ordering; contiguous cuts of that ordering then give every split roughly
    the class proportions of the whole set.
    """
    ratios = [float(r) for r in ratios]
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios must be positive and sum to 1, got {ratios}")
    n = len(posts)
    rng = np.random.default_rng(seed)
    by_class: dict[str, list[int]] = {}
    for i, p in enumerate(posts):
        by_class.setdefault(p.label or "", []).append(i)
    keys = np.empty(n)
    for label in sorted(by_class):
        members = np.array(by_class[label])
        rng.shuffle(members)
        offsets = rng.random(len(members))
        keys[members] = (np.arange(len(members)) + offsets) / len(members)
    order = sorted(range(n), key=lambda i: (keys[i], i))

    exact = np.array(ratios) * n
    sizes = np.floor(exact).astype(int)
    remainder = n - sizes.sum()
    for j in np.argsort(-(exact - sizes), kind="stable")[:remainder]:
        sizes[j] += 1
    if n >= len(ratios) and (sizes == 0).any():
        raise DataError(f"split sizes {sizes.tolist()} leave a split empty for {n} posts")
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [[posts[i] for i in order[lo:hi]] for lo, hi in zip(bounds[:-1], bounds[1:])]


def batches(items: Sequence, batch_size: int, rng: np.random.Generator | None = None) -> Iterable[list]:
    idx = np.arange(len(items))
    if rng is not None:
        rng.shuffle(idx)
    for lo in range(0, len(items), batch_size):
        yield [items[i] for i in idx[lo : lo + batch_size]]
