"""Closed-form parameter counts and MAC estimates against live modules."""

import pytest

from fbjscc.nn_core import ModelSpec
from fbjscc.protocol import (BroadcastConfig, FeedbackMode, SessionConfig,
                             build_broadcast, build_point_to_point)
from fbjscc.stats import (broadcast_parameter_count, count_module_parameters,
                          decoder_parameters, describe, encoder_parameters,
                          flops_estimate, layer_parameters, parameter_count)

KINDS = ("full", "lite", "scalar_snr", "none")


def make_session(kind, blocks, block_symbols=16):
    return SessionConfig(height=8, width=8, patch=4, blocks=blocks,
                         block_symbols=block_symbols, feedback=FeedbackMode(kind))


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("blocks", [1, 2, 4])
def test_closed_form_matches_live_modules(kind, blocks):
    spec = ModelSpec(width=16, layers=2, heads=2)
    session = make_session(kind, blocks)
    model = build_point_to_point(spec, session, seed=0)
    counts = parameter_count(spec, session)
    assert counts["encoder"] == count_module_parameters(model.encoder)
    assert counts["decoder"] == count_module_parameters(model.decoder)
    assert counts["total"] == count_module_parameters(model)


@pytest.mark.parametrize("pos_embed", ["dpe", "cpe"])
@pytest.mark.parametrize("siamese", [True, False])
def test_closed_form_tracks_architecture_switches(pos_embed, siamese):
    spec = ModelSpec(width=16, layers=1, heads=4, pos_embed=pos_embed,
                     siamese=siamese)
    session = make_session("full", 2)
    model = build_point_to_point(spec, session, seed=1)
    assert parameter_count(spec, session)["total"] == count_module_parameters(model)


def test_tiny_spec_manual_enumeration():
    """Every term written out by hand for a 4-wide, 1-layer model."""
    spec = ModelSpec(width=4, layers=1, heads=2, mlp_hidden=8)
    session = SessionConfig(height=4, width=4, patch=2, blocks=2,
                            block_symbols=8, feedback=FeedbackMode("lite"))
    assert session.tokens == 4
    assert session.token_dim == 12
    assert session.symbol_width == 4
    assert session.encoder_in_width == 16
    assert session.combined_width == 8

    qkv = 3 * 2 * (4 * 2 + 2)        # 60: q/k/v weights and biases, 2 heads
    merge = 2 * 2 * 4 + 4            # 20: head concat projection
    mlp = 4 * 8 + 8 + 8 * 4 + 4      # 76: expand and contract linears
    norms = 2 * 2 * 4                # 16: two LayerNorms, weight and bias
    assert layer_parameters(spec) == qkv + merge + mlp + norms == 172

    encoder = 16 * 4 + 4 * 4 + 172 + 4 * 4          # input, table, layer, head
    assert encoder == 268
    decoder = (8 * 4 + 4) + (4 * 4 + 4) + 4 * 4 + 172 + 4 * 12
    assert decoder == 292            # siamese pair, table, layer, output
    counts = parameter_count(spec, session)
    assert counts == {"encoder": 268, "decoder": 292, "total": 560}

    model = build_point_to_point(spec, session, seed=0)
    assert count_module_parameters(model) == 560


def test_lite_count_invariant_in_block_count():
    """With the symbol budget fixed, splitting it into more blocks is free."""
    spec = ModelSpec(width=256, layers=8, heads=8)
    budget = 512
    totals = []
    for blocks in (1, 2, 4):
        session = SessionConfig(height=32, width=32, patch=8, blocks=blocks,
                                block_symbols=budget // blocks,
                                feedback=FeedbackMode("lite"))
        totals.append(parameter_count(spec, session)["total"])
    assert totals[0] == totals[1] == totals[2] == 12_767_744


def test_full_count_grows_by_token_dim_times_width():
    spec = ModelSpec(width=256, layers=8, heads=8)
    budget = 512
    token_dim = 48
    lite_total = None
    for blocks in (1, 2, 4):
        lite = SessionConfig(height=32, width=32, patch=8, blocks=blocks,
                             block_symbols=budget // blocks,
                             feedback=FeedbackMode("lite"))
        full = SessionConfig(height=32, width=32, patch=8, blocks=blocks,
                             block_symbols=budget // blocks,
                             feedback=FeedbackMode("full"))
        lite_total = parameter_count(spec, lite)["total"]
        full_total = parameter_count(spec, full)["total"]
        assert full_total == lite_total + (blocks - 1) * token_dim * spec.width
    assert full_total == 12_804_608


def test_macs_reference_scale():
    """Full-mode session cost roughly doubles with the block count."""
    spec = ModelSpec(width=256, layers=8, heads=8)
    seen = []
    for blocks, expected in ((1, 0.85), (2, 1.70), (4, 3.41)):
        session = SessionConfig(height=32, width=32, patch=8, blocks=blocks,
                                block_symbols=512 // blocks,
                                feedback=FeedbackMode("full"))
        total = flops_estimate(spec, session)["total"]
        assert round(total / 1e9, 2) == expected
        seen.append(total)
    assert seen[0] < seen[1] < seen[2]


def test_flops_estimate_structure():
    spec = ModelSpec(width=16, layers=2, heads=2)
    for kind, blocks, expected_belief in (("full", 4, 3), ("full", 1, 0),
                                          ("lite", 4, 0), ("none", 4, 0)):
        session = make_session(kind, blocks)
        est = flops_estimate(spec, session)
        assert est["belief_runs"] == expected_belief
        assert est["total"] == (blocks * est["encoder_per_block"]
                                + (1 + est["belief_runs"]) * est["decoder_per_run"])


def test_flops_component_formulas():
    spec = ModelSpec(width=16, layers=1, heads=2)
    session = make_session("lite", 2)
    enc = encoder_parameters(spec, session.tokens, session.encoder_in_width,
                             session.symbol_width)
    dec = decoder_parameters(spec, session.tokens, session.combined_width,
                             session.token_dim)
    counts = parameter_count(spec, session)
    assert counts["encoder"] == enc
    assert counts["decoder"] == dec


def test_broadcast_count_matches_live_model():
    spec = ModelSpec(width=16, layers=1, heads=2)
    config = BroadcastConfig(height=8, width=8, patch=4, blocks=2,
                             block_symbols=16)
    model = build_broadcast(spec, config, seed=0)
    counts = broadcast_parameter_count(spec, config)
    assert counts["message_encoders"] == (
        count_module_parameters(model.message_a)
        + count_module_parameters(model.message_b)
    )
    assert counts["combiner"] == count_module_parameters(model.combiner)
    assert counts["decoders"] == (
        count_module_parameters(model.decoder_a)
        + count_module_parameters(model.decoder_b)
    )
    assert counts["total"] == count_module_parameters(model)


def test_describe_reports_session_facts():
    spec = ModelSpec(width=16, layers=1, heads=2)
    session = make_session("lite", 2)
    info = describe(spec, session)
    assert info["blocks"] == 2
    assert info["feedback"] == "lite"
    assert info["bandwidth_ratio"] == pytest.approx(32 / 192)
    assert info["parameters"]["total"] == parameter_count(spec, session)["total"]
    assert info["macs"]["total"] == flops_estimate(spec, session)["total"]
    assert info["parameters_millions"] == round(info["parameters"]["total"] / 1e6, 4)
