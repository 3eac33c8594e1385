"""Strict JSON run configuration.

One JSON document drives a whole run.  The schema is versioned and closed:
unknown keys anywhere are errors (naming the offending path), so typos
fail loudly instead of silently training the wrong thing.
"""

import hashlib
import json
import os

from .channel import ChannelConfig
from .encoder import FeedbackMode
from .errors import ConfigError
from .imaging import load_dataset
from .nn_core import ModelSpec
from .protocol import BroadcastConfig, SessionConfig
from .training import LossSpec, SnrStrategy, TrainConfig

SCHEMA_VERSION = 1

_SCHEMA = {
    "": {"schema_version", "seed", "dataset", "model", "session", "train",
         "loss", "broadcast"},
    "dataset": {"kind", "path", "count", "size", "seed"},
    "model": {"width", "layers", "heads", "mlp_hidden", "pos_embed", "siamese",
              "attention_scale", "pre_block"},
    "session": {"height", "width", "patch", "blocks", "block_symbols",
                "feedback_mode", "channel"},
    "session.channel": {"forward", "snr_db", "feedback", "snr_fb_db", "power",
                        "fading_var", "noiseless"},
    "train": {"lr", "batch_size", "epochs", "max_steps", "patience",
              "val_fraction", "snr"},
    "train.snr": {"kind", "snr_db", "low_db", "high_db"},
    "loss": {"kind", "lpips_weight", "mix"},
    "broadcast": {"height", "width", "patch", "blocks", "block_symbols",
                  "snr1_db", "snr2_db", "power", "mix"},
}


def _check_keys(doc: dict, path: str) -> None:
    allowed = _SCHEMA.get(path)
    if allowed is None:
        raise ConfigError(f"unexpected object at config path {path!r}")
    for key, value in doc.items():
        where = f"{path}.{key}" if path else key
        if key not in allowed:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(value, dict):
            _check_keys(value, where)


def validate_config(doc: dict) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(doc, "")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version must be {SCHEMA_VERSION}, got {version!r}"
        )
    return doc


def load_config(path: str) -> dict:
    if not os.path.isfile(path):
        raise ConfigError(f"config file {path!r} does not exist")
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
    return validate_config(doc)


def config_hash(doc: dict) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_model_spec(doc: dict) -> ModelSpec:
    return ModelSpec(**doc.get("model", {}))


def build_session(doc: dict) -> SessionConfig:
    section = dict(doc.get("session", {}))
    channel = ChannelConfig(**section.pop("channel", {}))
    feedback = FeedbackMode(section.pop("feedback_mode", "lite"))
    return SessionConfig(channel=channel, feedback=feedback, **section)


def build_train_config(doc: dict) -> TrainConfig:
    section = dict(doc.get("train", {}))
    snr = section.pop("snr", None)
    strategy = SnrStrategy(**snr) if snr is not None else None
    return TrainConfig(seed=doc.get("seed", 0), snr=strategy, **section)


def build_loss_spec(doc: dict) -> LossSpec:
    return LossSpec(**doc.get("loss", {}))


def build_broadcast_config(doc: dict) -> BroadcastConfig:
    if "broadcast" not in doc:
        raise ConfigError("config has no 'broadcast' section")
    return BroadcastConfig(**doc["broadcast"])


def dataset_from_config(doc: dict):
    section = doc.get("dataset")
    if not section:
        raise ConfigError("config has no 'dataset' section")
    kind = section.get("kind")
    if kind is None:
        raise ConfigError("dataset.kind is missing")
    if kind == "synthetic":
        params = {k: section[k] for k in ("count", "size", "seed") if k in section}
        missing = {"count", "size", "seed"} - set(params)
        if missing:
            raise ConfigError(f"dataset.{sorted(missing)[0]} is missing")
        return load_dataset(None, "synthetic", **params)
    path = section.get("path")
    if not path:
        raise ConfigError("dataset.path is missing")
    return load_dataset(path, kind)


def code_version() -> str:
    """Content hash of the installed package source, for run manifests."""
    root = os.path.dirname(os.path.abspath(__file__))
    digest = hashlib.sha256()
    for name in sorted(os.listdir(root)):
        if not name.endswith(".py"):
            continue
        digest.update(name.encode())
        with open(os.path.join(root, name), "rb") as fh:
            digest.update(fh.read())
    return digest.hexdigest()
