"""Checkpoint archives: bit-exact round trips and format gating."""

import json
import zipfile

import pytest
import torch

from fbjscc.checkpoint import (load_checkpoint, peek_manifest, restore_model,
                               save_checkpoint)
from fbjscc.errors import FormatError
from fbjscc.nn_core import ModelSpec
from fbjscc.protocol import (BroadcastConfig, ChannelConfig, FeedbackMode,
                             SessionConfig, build_broadcast,
                             build_point_to_point, run_session)
from fbjscc.seeding import generator

SPEC = ModelSpec(width=16, layers=1, heads=2)
SESSION = SessionConfig(height=8, width=8, patch=4, blocks=2, block_symbols=16,
                        channel=ChannelConfig(snr_db=12.5),
                        feedback=FeedbackMode("full"))


def test_point_to_point_round_trip(tmp_path):
    model = build_point_to_point(SPEC, SESSION, seed=3)
    history = [{"epoch": 1, "step": 10, "train_loss": 0.5, "val_psnr": 20.0}]
    extra = {"config_hash": "abc", "note": "round trip"}
    path = str(tmp_path / "model.fbz")
    save_checkpoint(path, model, history=history, extra=extra)

    ckpt = load_checkpoint(path)
    assert ckpt.kind == "point_to_point"
    assert ckpt.spec == SPEC
    assert ckpt.session == SESSION
    assert ckpt.history == history
    assert ckpt.extra == extra
    state = model.state_dict()
    assert set(ckpt.state) == set(state)
    for name, tensor in state.items():
        assert torch.equal(ckpt.state[name], tensor), name


def test_restore_model_behaves_identically(tmp_path):
    model = build_point_to_point(SPEC, SESSION, seed=4)
    path = str(tmp_path / "model.fbz")
    save_checkpoint(path, model)
    restored, ckpt = restore_model(path)
    assert not restored.training  # eval mode after restore
    image = torch.rand(8, 8, 3, generator=generator(0))
    before = run_session(image, model, SESSION, seed=9, image_index=0)
    after = run_session(image, restored, SESSION, seed=9, image_index=0)
    assert torch.equal(before.reconstruction, after.reconstruction)


def test_save_load_save_is_stable(tmp_path):
    model = build_point_to_point(SPEC, SESSION, seed=5)
    first = str(tmp_path / "a.fbz")
    second = str(tmp_path / "b.fbz")
    save_checkpoint(first, model, history=[{"epoch": 1}], extra={"k": 1})
    restored, ckpt = restore_model(first)
    save_checkpoint(second, restored, history=ckpt.history, extra=ckpt.extra)
    again = load_checkpoint(second)
    for name, tensor in load_checkpoint(first).state.items():
        assert torch.equal(again.state[name], tensor)


def test_broadcast_round_trip(tmp_path):
    config = BroadcastConfig(height=8, width=8, patch=4, blocks=2,
                             block_symbols=16, snr1_db=4.0, snr2_db=10.0,
                             mix=0.25)
    model = build_broadcast(SPEC, config, seed=6)
    path = str(tmp_path / "bc.fbz")
    save_checkpoint(path, model)
    restored, ckpt = restore_model(path)
    assert ckpt.kind == "broadcast"
    assert ckpt.broadcast == config
    for name, tensor in model.state_dict().items():
        assert torch.equal(restored.state_dict()[name], tensor), name


def test_save_rejects_plain_modules(tmp_path):
    with pytest.raises(FormatError):
        save_checkpoint(str(tmp_path / "x.fbz"), torch.nn.Linear(2, 2))


def test_version_gate(tmp_path):
    model = build_point_to_point(SPEC, SESSION, seed=7)
    path = str(tmp_path / "model.fbz")
    save_checkpoint(path, model)
    with zipfile.ZipFile(path) as zf:
        names = zf.namelist()
        docs = {n: zf.read(n) for n in names}
    manifest = json.loads(docs["manifest.json"])
    manifest["format_version"] = 999
    docs["manifest.json"] = json.dumps(manifest).encode()
    with zipfile.ZipFile(path, "w") as zf:
        for n, data in docs.items():
            zf.writestr(n, data)
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_format_name_gate(tmp_path):
    path = str(tmp_path / "not_a_checkpoint.fbz")
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("manifest.json", json.dumps({"format": "something-else",
                                                 "format_version": 1}))
    with pytest.raises(FormatError):
        load_checkpoint(path)
    with pytest.raises(FormatError):
        peek_manifest(path)


def test_peek_manifest_reads_context_only(tmp_path):
    model = build_point_to_point(SPEC, SESSION, seed=8)
    path = str(tmp_path / "model.fbz")
    save_checkpoint(path, model, extra={"seed": 8})
    doc = peek_manifest(path)
    assert doc["format_version"] == 1
    inner = doc["manifest"]
    assert inner["kind"] == "point_to_point"
    assert inner["model_spec"]["width"] == 16
    assert inner["session"]["blocks"] == 2
    assert inner["session"]["channel"]["snr_db"] == 12.5
    assert inner["extra"] == {"seed": 8}
