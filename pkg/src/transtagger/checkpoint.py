"""Checkpoint directories: JSON manifest + little-endian float32 blob.

Layout::

    manifest.json   run config, per-model configs, tensor index, POIs
    params.bin      tensors back to back in manifest order, '<f4'
    vocab.txt       one token per line, line number = id
    tree.json       class hierarchy (hier and mtl variants)
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import Poi
from .fusion import FeatureSchema, FusionConfig, TransTagger
from .hierarchy import LcpnModel, PoiTree
from .numerics import parameter
from .textenc import EncoderConfig, Vocab
from .training import Tagger

FORMAT_VERSION = 1
MANIFEST, BLOB, VOCAB, TREE = "manifest.json", "params.bin", "vocab.txt", "tree.json"


class CheckpointError(ValueError):
    pass


def save_checkpoint(tagger: Tagger, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    models = tagger.models()
    if len({tuple(m.vocab.itos) for m in models.values()}) > 1:
        raise CheckpointError("all models in a checkpoint must share one vocabulary")

    index = []
    chunks = []
    offset = 0
    for model_name, model in models.items():
        for pname in sorted(model.params):
            arr = np.ascontiguousarray(model.params[pname].data, dtype="<f4")
            raw = arr.tobytes()
            index.append(
                {"model": model_name, "name": pname, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
            )
            chunks.append(raw)
            offset += len(raw)

    manifest = {
        "format": FORMAT_VERSION,
        "variant": tagger.variant,
        "run_config": tagger.config.to_dict(),
        "models": {name: m.config_dict() for name, m in models.items()},
        "vocab": VOCAB,
        "tree": TREE if tagger.tree is not None else None,
        "pois": [asdict(p) for p in tagger.pois],
        "tensors": index,
        "blob": BLOB,
        "blob_nbytes": offset,
    }
    if tagger.lcpn is not None:
        manifest["lcpn"] = {
            "theta": tagger.lcpn.theta,
            "priors": {k: v.tolist() for k, v in tagger.lcpn.priors.items()},
            "warnings": tagger.lcpn.warnings,
        }
    (directory / BLOB).write_bytes(b"".join(chunks))
    next(iter(models.values())).vocab.save(directory / VOCAB)
    if tagger.tree is not None:
        tagger.tree.save(directory / TREE)
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return directory


def _model_from_config(cfg: dict, vocab: Vocab) -> TransTagger:
    return TransTagger(
        schema=FeatureSchema(**cfg["schema"]),
        encoder=EncoderConfig(**cfg["encoder"]),
        fusion=FusionConfig(**cfg["fusion"]),
        vocab=vocab,
        categories={k: list(v) for k, v in cfg["categories"].items()},
        classes={k: list(v) for k, v in cfg["classes"].items()},
    )


def load_checkpoint(directory: str | Path) -> Tagger:
    directory = Path(directory)
    manifest_path = directory / MANIFEST
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
    blob = (directory / manifest["blob"]).read_bytes()
    if len(blob) != manifest["blob_nbytes"]:
        raise CheckpointError(f"blob has {len(blob)} bytes, manifest expects {manifest['blob_nbytes']}")

    vocab = Vocab.load(directory / manifest["vocab"])
    models = {name: _model_from_config(cfg, vocab) for name, cfg in manifest["models"].items()}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if entry["nbytes"] != nbytes:
            raise CheckpointError(f"tensor {entry['model']}/{entry['name']}: {entry['nbytes']} bytes for shape {shape}")
        lo, hi = entry["offset"], entry["offset"] + nbytes
        if hi > len(blob):
            raise CheckpointError(f"tensor {entry['model']}/{entry['name']} runs past the end of the blob")
        arr = np.frombuffer(blob[lo:hi], dtype="<f4").reshape(shape).astype(np.float64)
        models[entry["model"]].params[entry["name"]] = parameter(arr, name=entry["name"])
    for name, model in models.items():
        expected = _expected_shapes(model)
        if set(model.params) != set(expected):
            missing = sorted(set(expected) - set(model.params))
            extra = sorted(set(model.params) - set(expected))
            raise CheckpointError(f"model {name!r}: missing tensors {missing}, unexpected {extra}")
        for pname, shape in expected.items():
            if model.params[pname].shape != shape:
                raise CheckpointError(f"model {name!r}: tensor {pname} has shape {model.params[pname].shape}, expected {shape}")

    cfg = RunConfig.from_dict(manifest["run_config"])
    pois = [Poi(**p) for p in manifest["pois"]]
    tree = PoiTree.load(directory / manifest["tree"]) if manifest.get("tree") else None
    if manifest["variant"] == "hier":
        info = manifest["lcpn"]
        lcpn = LcpnModel(
            tree,
            models,
            info["theta"],
            {k: np.asarray(v) for k, v in info["priors"].items()},
            list(info["warnings"]),
        )
        return Tagger(cfg, pois, lcpn=lcpn, tree=tree)
    return Tagger(cfg, pois, model=models["main"], tree=tree)


def _expected_shapes(model: TransTagger) -> dict[str, tuple[int, ...]]:
    probe = TransTagger(
        model.schema, model.encoder, model.fusion, model.vocab, model.categories, model.classes
    )
    probe.init_params(np.random.default_rng(0))
    return {k: v.shape for k, v in probe.params.items()}
