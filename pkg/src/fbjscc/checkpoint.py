"""Checkpoint container: model weights plus enough context to rebuild them.

A checkpoint is an array archive (see arrays.py) whose manifest records the
architecture spec, the session geometry, training history and a free-form
extra dict (run configuration, hashes, fallback flags).  Weights are stored
as raw little-endian arrays so save -> load -> save round trips are
bit-exact.  Loading rejects unknown formats and versions outright.
"""

from dataclasses import asdict, dataclass

import torch

from .arrays import load_array_archive, read_manifest, save_array_archive
from .channel import ChannelConfig
from .encoder import FeedbackMode
from .errors import FormatError
from .nn_core import ModelSpec
from .protocol import (BroadcastConfig, BroadcastModel, PointToPointModel,
                       SessionConfig)

CHECKPOINT_FORMAT = "fbjscc-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    kind: str  # "point_to_point" | "broadcast"
    spec: ModelSpec
    session: SessionConfig | None
    broadcast: BroadcastConfig | None
    history: list
    extra: dict
    state: dict


def _session_to_dict(session: SessionConfig) -> dict:
    doc = asdict(session)
    return doc


def _session_from_dict(doc: dict) -> SessionConfig:
    doc = dict(doc)
    doc["channel"] = ChannelConfig(**doc["channel"])
    doc["feedback"] = FeedbackMode(**doc["feedback"])
    return SessionConfig(**doc)


def save_checkpoint(path: str, model, *, history=None, extra=None) -> None:
    """Persist a PointToPointModel or BroadcastModel with its context."""
    if isinstance(model, PointToPointModel):
        manifest = {
            "kind": "point_to_point",
            "model_spec": asdict(model.spec),
            "session": _session_to_dict(model.session),
        }
    elif isinstance(model, BroadcastModel):
        manifest = {
            "kind": "broadcast",
            "model_spec": asdict(model.spec),
            "broadcast": asdict(model.config),
        }
    else:
        raise FormatError(f"cannot checkpoint a {type(model).__name__}")
    manifest["history"] = history or []
    manifest["extra"] = extra or {}
    arrays = {name: tensor for name, tensor in model.state_dict().items()}
    save_array_archive(path, arrays, manifest,
                       format_name=CHECKPOINT_FORMAT, format_version=CHECKPOINT_VERSION)


def load_checkpoint(path: str) -> Checkpoint:
    manifest, arrays = load_array_archive(
        path, format_name=CHECKPOINT_FORMAT, format_version=CHECKPOINT_VERSION
    )
    spec = ModelSpec(**manifest["model_spec"])
    session = None
    broadcast = None
    if manifest["kind"] == "point_to_point":
        session = _session_from_dict(manifest["session"])
    elif manifest["kind"] == "broadcast":
        broadcast = BroadcastConfig(**manifest["broadcast"])
    else:
        raise FormatError(f"unknown checkpoint kind {manifest['kind']!r}")
    state = {name: torch.from_numpy(arr) for name, arr in arrays.items()}
    return Checkpoint(
        kind=manifest["kind"],
        spec=spec,
        session=session,
        broadcast=broadcast,
        history=manifest.get("history", []),
        extra=manifest.get("extra", {}),
        state=state,
    )


def restore_model(path: str):
    """Rebuild the model a checkpoint describes and load its weights."""
    ckpt = load_checkpoint(path)
    if ckpt.kind == "point_to_point":
        model = PointToPointModel(ckpt.spec, ckpt.session)
    else:
        model = BroadcastModel(ckpt.spec, ckpt.broadcast)
    model.load_state_dict(ckpt.state)
    model.eval()
    return model, ckpt


def peek_manifest(path: str) -> dict:
    """Checkpoint manifest without loading any weights."""
    doc = read_manifest(path)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path!r} is not a checkpoint archive")
    return doc
