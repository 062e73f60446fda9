import pytest
import torch

from stegact.backbone import BackboneConfig, build_branch
from stegact.errors import DimensionError


def test_paper_scale_stage_shapes():
    cfg = BackboneConfig(base_width=64)
    branch = build_branch(cfg, seed=0)
    x = torch.zeros(1, 3, 16, 112, 112)
    feats = branch(x)
    expected = [
        (1, 64, 16, 56, 56),
        (1, 128, 8, 28, 28),
        (1, 256, 4, 14, 14),
        (1, 512, 2, 7, 7),
    ]
    assert [tuple(s.shape) for s in feats.stages] == expected


def test_desk_scale_stage_shapes():
    cfg = BackboneConfig(base_width=16)
    branch = build_branch(cfg, seed=0)
    x = torch.zeros(2, 3, 16, 32, 32)
    feats = branch(x)
    expected = [
        (2, 16, 16, 16, 16),
        (2, 32, 8, 8, 8),
        (2, 64, 4, 4, 4),
        (2, 128, 2, 2, 2),
    ]
    assert [tuple(s.shape) for s in feats.stages] == expected


@pytest.mark.parametrize("t,h", [(8, 16), (16, 48), (24, 32)])
def test_shape_law_over_random_legal_sizes(t, h):
    cfg = BackboneConfig(base_width=4)
    branch = build_branch(cfg, seed=1).eval()
    feats = branch(torch.zeros(1, 3, t, h, h))
    t_n, h_n = t, h
    for n, stage in enumerate(feats.stages):
        t_n //= cfg.temporal_strides[n]
        h_n //= 2
        assert tuple(stage.shape) == (1, cfg.stage_channels[n], t_n, h_n, h_n)


def test_zero_input_smoke():
    branch = build_branch(BackboneConfig(base_width=4), seed=2).eval()
    feats = branch(torch.zeros(1, 3, 8, 16, 16))
    for stage in feats.stages:
        assert torch.isfinite(stage).all()


def test_divisibility_error_reports_largest_legal_size():
    branch = build_branch(BackboneConfig(base_width=4), seed=3)
    with pytest.raises(DimensionError, match="largest legal <= 18 is 16"):
        branch(torch.zeros(1, 3, 8, 18, 16))
    with pytest.raises(DimensionError, match="time 12 not divisible by 8"):
        branch(torch.zeros(1, 3, 12, 16, 16))


def test_temporal_lengths_helper():
    cfg = BackboneConfig()
    assert cfg.temporal_lengths(16) == [16, 8, 4, 2]


def test_seed_determinism():
    a = build_branch(BackboneConfig(base_width=8), seed=7)
    b = build_branch(BackboneConfig(base_width=8), seed=7)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        assert torch.equal(pa, pb)
    c = build_branch(BackboneConfig(base_width=8), seed=8)
    assert any(
        not torch.equal(pa, pc) for (_, pa), (_, pc) in zip(a.named_parameters(), c.named_parameters())
    )


def test_every_parameter_gets_gradient():
    torch.manual_seed(0)
    branch = build_branch(BackboneConfig(base_width=4), seed=4)
    x = torch.randn(2, 3, 8, 16, 16)
    feats = branch(x)
    loss = (feats.final ** 2).mean()
    loss.backward()
    for name, p in branch.named_parameters():
        assert p.grad is not None, name
        assert p.grad.abs().max().item() > 0, name


def test_branch_rejects_wrong_rank():
    branch = build_branch(BackboneConfig(base_width=4), seed=5)
    with pytest.raises(DimensionError):
        branch(torch.zeros(3, 8, 16, 16))
