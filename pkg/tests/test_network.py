import numpy as np
import pytest
import torch

from stegact import promotion
from stegact.backbone import BackboneConfig
from stegact.errors import ConfigError, DimensionError
from stegact.network import (
    BandAggregator,
    NetworkConfig,
    SINGLETON_GROUPING,
    build_network,
    group_branches,
    load_network,
    network_config_from_dict,
    save_network,
)


def desk_config(**overrides):
    base = dict(backbone=BackboneConfig(base_width=8), num_classes=4)
    base.update(overrides)
    return NetworkConfig(**base)


def rand_clip(shape=(16, 32, 32, 3), seed=0):
    rng = np.random.default_rng(seed)
    return torch.from_numpy(rng.uniform(0, 1, size=shape).astype(np.float32))


def test_group_plan_examples():
    plan = group_branches(SINGLETON_GROUPING)
    assert len(plan.groups) == 4
    assert plan.group_channels == (3, 3, 3, 3)
    assert plan.cross_enabled

    single = group_branches((("ll", "lh", "hl", "hh"),))
    assert single.group_channels == (12,)
    assert not single.cross_enabled

    two = group_branches((("ll",), ("lh", "hl", "hh")))
    assert two.group_channels == (3, 9)
    assert two.cross_enabled


def test_group_plan_rejects_non_partition():
    with pytest.raises(ConfigError):
        group_branches((("ll", "lh"), ("hl",)))
    with pytest.raises(ConfigError):
        group_branches((("ll",), ("lh",), ("hl",), ("hh", "ll")))
    with pytest.raises(ConfigError):
        group_branches((("ll",), ("xx",), ("hl",), ("hh",)))


def test_desk_forward_shapes_and_weight_range():
    model = build_network(desk_config(), seed=0).eval()
    out = model(rand_clip(seed=1))
    assert out.logits.shape == (4,)
    assert out.band_weights.shape == (4,)
    assert ((out.band_weights > 0) & (out.band_weights < 1)).all()
    assert out.projections is None


def test_many_class_head_shape():
    model = build_network(desk_config(num_classes=101), seed=0).eval()
    out = model(rand_clip(seed=2))
    assert out.logits.shape == (101,)


def test_eval_determinism_bitwise():
    model = build_network(desk_config(), seed=3).eval()
    clip = rand_clip(seed=4)
    with torch.no_grad():
        a = model(clip).logits
        b = model(clip).logits
    assert torch.equal(a, b)


def test_batched_forward_matches_single_in_eval():
    model = build_network(desk_config(), seed=5).eval()
    clips = torch.stack([rand_clip(seed=6), rand_clip(seed=7)])
    with torch.no_grad():
        batched = model(clips)
        single = model(clips[0])
    assert batched.logits.shape == (2, 4)
    assert torch.allclose(batched.logits[0], single.logits, atol=1e-5)


def test_forward_with_secret_returns_projections():
    model = build_network(desk_config(), seed=8)
    model.train()
    clip = torch.stack([rand_clip(seed=9), rand_clip(seed=10)])
    secret = torch.stack([rand_clip(seed=11), rand_clip(seed=12)])
    out = model(clip, secret=secret)
    assert out.projections is not None
    assert set(out.projections) == {1, 2, 3, 4}
    assert out.projections[1]["lh"].shape == (2, 16, 8, 8, 3)
    assert out.projections[4]["hh"].shape == (2, 2, 1, 1, 3)


def test_secret_shape_mismatch_raises():
    model = build_network(desk_config(), seed=13)
    with pytest.raises(DimensionError, match="secret"):
        model(rand_clip(seed=14), secret=rand_clip((16, 64, 64, 3), seed=15))


def test_inference_never_builds_targets():
    model = build_network(desk_config(), seed=16).eval()
    promotion.reset_target_build_count()
    with torch.no_grad():
        model(rand_clip(seed=17))
    assert promotion.target_build_count() == 0


def test_grouping_single_branch_runs():
    cfg = desk_config(grouping=(("ll", "lh", "hl", "hh"),))
    model = build_network(cfg, seed=18).eval()
    out = model(rand_clip(seed=19))
    assert out.logits.shape == (4,)
    assert len(model.branches) == 1
    assert len(model.high_blocks) == 0


def test_grouping_two_branches_runs():
    cfg = desk_config(grouping=(("ll",), ("lh", "hl", "hh")))
    model = build_network(cfg, seed=20).eval()
    out = model(rand_clip(seed=21))
    assert out.logits.shape == (4,)
    assert len(model.branches) == 2


def test_share_branch_weights():
    cfg = desk_config(share_branch_weights=True)
    model = build_network(cfg, seed=22)
    assert len(model.branches) == 1
    cfg_bad = desk_config(
        grouping=(("ll",), ("lh", "hl", "hh")), share_branch_weights=True
    )
    with pytest.raises(ConfigError, match="equal group channel"):
        build_network(cfg_bad, seed=23)


def test_strength_zero_equals_zeroed_cross_values():
    cfg_on = desk_config(diff_strength=0.2)
    cfg_off = desk_config(diff_strength=0.0)
    model_on = build_network(cfg_on, seed=24).eval()
    model_off = build_network(cfg_off, seed=24).eval()
    model_off.load_state_dict(model_on.state_dict())
    with torch.no_grad():
        for block in model_on.high_blocks.values():
            block.ca.v.weight.zero_()
    clip = rand_clip(seed=25)
    with torch.no_grad():
        a = model_on(clip).logits
        b = model_off(clip).logits
    assert torch.allclose(a, b, atol=1e-7)


def test_logit_gradients_flow_to_input():
    model = build_network(desk_config(), seed=26)
    model.train()
    clip = torch.stack([rand_clip(seed=27), rand_clip(seed=28)]).requires_grad_(True)
    out = model(clip)
    out.logits.sum().backward()
    assert clip.grad is not None
    assert torch.isfinite(clip.grad).all()
    assert clip.grad.abs().max() > 0


def test_attention_weights_exposed_for_reports():
    model = build_network(desk_config(), seed=29).eval()
    with torch.no_grad():
        out = model(rand_clip(seed=30), return_weights=True)
    assert "ll_group" in out.attention
    assert set(out.attention) == {"ll_group", "lh", "hl", "hh"}
    t4 = model.cfg.backbone.temporal_lengths(16)[-1]
    assert out.attention["lh"]["self"].shape == (1, t4, t4)
    assert out.attention["lh"]["cross"].shape == (1, t4, t4)


def test_checkpoint_round_trip(tmp_path):
    cfg = desk_config()
    model = build_network(cfg, seed=31).eval()
    path = tmp_path / "net.ckpt"
    save_network(path, model, extra_config={"hider": {"strength": 0.05}})
    loaded = load_network(path, cfg).eval()
    clip = rand_clip(seed=32)
    with torch.no_grad():
        assert torch.equal(model(clip).logits, loaded(clip).logits)


def test_checkpoint_refuses_config_mismatch(tmp_path):
    model = build_network(desk_config(), seed=33)
    path = tmp_path / "net.ckpt"
    save_network(path, model)
    with pytest.raises(ConfigError, match="fingerprint"):
        load_network(path, desk_config(num_classes=5))


def test_network_config_round_trips_through_dict():
    cfg = desk_config(grouping=(("ll",), ("lh", "hl", "hh")), pe_mode="rope")
    back = network_config_from_dict(cfg.to_dict())
    assert back == cfg
    assert back.fingerprint() == cfg.fingerprint()


def test_aggregator_identical_bands_and_equal_weights():
    torch.manual_seed(34)
    agg = BandAggregator(dim=8, mlp_hidden=8, conv_hidden=4)
    with torch.no_grad():
        agg.weight_mlp[2].weight.zero_()
        agg.weight_mlp[2].bias.fill_(0.3)
    tokens = torch.randn(1, 2, 8)
    band_tokens = {b: tokens for b in ("ll", "lh", "hl", "hh")}
    fused, weights = agg(band_tokens)
    assert torch.allclose(weights, torch.full((1, 4), torch.sigmoid(torch.tensor(0.3))))
    vec = tokens.mean(dim=-2)
    stack = torch.stack([vec] * 4, dim=1) * weights.unsqueeze(-1)
    expected = agg.fuse(stack).squeeze(1)
    assert torch.allclose(fused, expected, atol=1e-6)


def test_aggregator_saturated_bias_matches_unweighted_stack():
    torch.manual_seed(35)
    agg = BandAggregator(dim=8, mlp_hidden=8, conv_hidden=4)
    with torch.no_grad():
        agg.weight_mlp[2].weight.zero_()
        agg.weight_mlp[2].bias.fill_(20.0)
    band_tokens = {b: torch.randn(1, 2, 8) for b in ("ll", "lh", "hl", "hh")}
    fused, weights = agg(band_tokens)
    assert (1 - weights).abs().max().item() < 1e-8
    stack = torch.stack([band_tokens[b].mean(dim=-2) for b in ("ll", "lh", "hl", "hh")], dim=1)
    expected = agg.fuse(stack).squeeze(1)
    assert torch.allclose(fused, expected, atol=1e-6)


def test_aggregator_zeroed_band_changes_output():
    torch.manual_seed(36)
    agg = BandAggregator(dim=8, mlp_hidden=8, conv_hidden=4)
    band_tokens = {b: torch.randn(1, 2, 8) for b in ("ll", "lh", "hl", "hh")}
    fused, _ = agg(band_tokens)
    zeroed = dict(band_tokens)
    zeroed["hh"] = torch.zeros_like(band_tokens["hh"])
    fused_zeroed, _ = agg(zeroed)
    assert not torch.allclose(fused, fused_zeroed)


def test_aggregator_missing_band():
    agg = BandAggregator(dim=4, mlp_hidden=4, conv_hidden=2)
    with pytest.raises(DimensionError, match="hh"):
        agg({b: torch.randn(1, 2, 4) for b in ("ll", "lh", "hl")})
