import io
import math

import numpy as np
import pytest
import torch

from mofo.artifacts import CheckpointCodec
from mofo.boxdetect import MotionBox
from mofo.config import NetConfig
from mofo.errors import RejectedInputError
from mofo.gradcheck import check_gradients, relative_error
from mofo.masker import motion_plan, tubify
from mofo.tinynet import (MultiCrossAttention, Prediction, build_net, classify, cross_attention, cross_entropy,
                          encoder_forward, gradients, load_net_tensors, mae_forward, mca_forward, net_tensors,
                          normalize_tubes, patch_embed, reconstruction_loss)
from mofo.train import token_inside_flags

BOX = MotionBox(0, 0, 16, 16)


def micro_clip(seed=0, cfg=None):
    cfg = cfg or NetConfig()
    return np.random.default_rng(seed).random(cfg.clip_dims)


def micro_plan(cfg=None, seed=0, overall=0.75):
    cfg = cfg or NetConfig()
    T, H, W, _ = cfg.clip_dims
    return motion_plan((T, H, W), cfg.tube_dims, BOX, overall, 0.75, seed)


def test_micro_config_shape():
    cfg = NetConfig()
    assert cfg.grid_dims == (2, 4, 4)
    assert cfg.num_tokens == 32
    assert NetConfig(clip_dims=(16, 224, 224, 3), tube_dims=(8, 16, 16)).num_tokens == 392


def test_config_rejects_indivisible_heads():
    with pytest.raises(ValueError):
        NetConfig(d_model=30, heads=4)


def test_zero_clip_embeds_to_positions():
    net = build_net(seed=1)
    with torch.no_grad():
        net.patch_proj.bias.zero_()
    tokens = patch_embed(np.zeros(NetConfig().clip_dims), net)
    assert torch.equal(tokens, net.pos_embed)


def test_identity_projection_reproduces_tube():
    cfg = NetConfig(clip_dims=(1, 4, 8, 1), tube_dims=(1, 4, 8), d_model=32, heads=2)
    net = build_net(cfg, dtype=torch.float64)
    with torch.no_grad():
        net.patch_proj.weight.copy_(torch.eye(32, dtype=torch.float64))
        net.patch_proj.bias.zero_()
        net.pos_embed.zero_()
    clip = np.random.default_rng(0).random((1, 4, 8))
    tokens = patch_embed(clip, net)
    assert tokens.shape == (1, 32)
    assert np.allclose(tokens.detach().numpy()[0], tubify(clip, (1, 4, 8))[0])


def test_single_token_attention_reduces_to_value_path():
    cfg = NetConfig(depth_enc=1)
    net = build_net(cfg, seed=2, dtype=torch.float64)
    x = torch.randn(1, cfg.d_model, dtype=torch.float64)
    block = net.encoder[0]
    v = block.msa.to_qkv(block.msa.norm(x)).chunk(3, dim=-1)[2]
    y = x + block.msa.to_out(v)
    y = y + block.mlp(y)
    expected = net.encoder_norm(y)
    assert torch.allclose(encoder_forward(x, net), expected, atol=1e-12)


def test_encoder_is_permutation_equivariant():
    net = build_net(seed=3, dtype=torch.float64)
    tokens = patch_embed(micro_clip(3), net)
    perm = torch.randperm(tokens.shape[0], generator=torch.Generator().manual_seed(0))
    assert torch.allclose(encoder_forward(tokens[perm], net), encoder_forward(tokens, net)[perm], atol=1e-10)


def test_encoder_rejects_empty_input():
    net = build_net()
    with pytest.raises(RejectedInputError):
        encoder_forward(torch.zeros(0, 32), net)


def test_encoder_output_finite_across_seeds():
    net = build_net(seed=4)
    for seed in range(100):
        tokens = torch.randn(7, 32, generator=torch.Generator().manual_seed(seed)) * 10
        assert torch.isfinite(encoder_forward(tokens, net)).all()


def test_reconstruction_loss_hand_values():
    target = normalize_tubes(torch.randn(5, 16, dtype=torch.float64))
    assert float(reconstruction_loss(target, target)) == 0.0
    assert float(reconstruction_loss(target[:1] + 2.0, target[:1])) == pytest.approx(4.0)
    recon = torch.randn(5, 16, dtype=torch.float64)
    perm = torch.tensor([3, 1, 4, 0, 2])
    assert float(reconstruction_loss(recon[perm], target[perm])) == pytest.approx(
        float(reconstruction_loss(recon, target)), rel=1e-12)


def test_normalized_targets():
    tubes = torch.rand(20, 256, dtype=torch.float64) * 3 + 1
    normed = normalize_tubes(tubes)
    assert normed.mean(dim=-1).abs().max() < 1e-6
    assert (normed.var(dim=-1, unbiased=False) - 1).abs().max() < 1e-4


def test_mae_forward_shapes_and_loss():
    cfg = NetConfig()
    net = build_net(cfg, seed=5)
    _, plan = micro_plan(cfg)
    reconstruction, loss = mae_forward(micro_clip(), plan.token_mask, net)
    assert reconstruction.shape == (plan.num_masked, cfg.tube_size)
    assert torch.isfinite(loss) and float(loss) > 0


def test_mae_forward_rejects_degenerate_plans():
    net = build_net()
    with pytest.raises(RejectedInputError):
        mae_forward(micro_clip(), np.ones(32, dtype=bool), net)
    with pytest.raises(RejectedInputError):
        mae_forward(micro_clip(), np.zeros(32, dtype=bool), net)


def test_masked_content_never_reaches_the_encoder():
    cfg = NetConfig()
    net = build_net(cfg, seed=6)
    grid, plan = micro_plan(cfg)
    clip = micro_clip(6)
    altered = clip.copy()
    tt, th, tw = cfg.tube_dims
    for t, h, w in zip(*np.nonzero(plan.masked)):
        altered[t * tt:(t + 1) * tt, h * th:(h + 1) * th, w * tw:(w + 1) * tw] = 0.5
    first, _ = mae_forward(clip, plan.token_mask, net)
    second, _ = mae_forward(altered, plan.token_mask, net)
    assert torch.equal(first, second)


def test_cross_attention_hand_values():
    v = torch.tensor([[2.0, -1.0]])
    assert torch.equal(cross_attention(torch.tensor([[0.3, 0.1]]), torch.tensor([[1.0, 4.0]]), v), v)
    keys = torch.tensor([[1.0, 0.0], [1.0, 0.0]])
    values = torch.tensor([[2.0, 0.0], [0.0, 4.0]])
    assert torch.allclose(cross_attention(torch.tensor([[1.0, 1.0]]), keys, values), torch.tensor([[1.0, 2.0]]))
    out = cross_attention(torch.tensor([[1.0]], dtype=torch.float64), torch.tensor([[1.0], [0.0]], dtype=torch.float64),
                          torch.tensor([[2.0], [0.0]], dtype=torch.float64))
    assert float(out) == pytest.approx(2 * math.e / (math.e + 1), abs=1e-12)
    assert float(out) == pytest.approx(1.46212, abs=1e-4)


def test_cross_attention_rejects_empty_keys():
    with pytest.raises(RejectedInputError):
        cross_attention(torch.ones(1, 4), torch.ones(0, 4), torch.ones(0, 4))


def test_single_head_identity_weights():
    mca = MultiCrossAttention(4, 1).double()
    with torch.no_grad():
        for w in (mca.w_q, mca.w_k, mca.w_v):
            w.copy_(torch.eye(4, dtype=torch.float64).unsqueeze(0))
        mca.w_o.copy_(torch.eye(4, dtype=torch.float64))
    inner, outer = torch.randn(3, 4, dtype=torch.float64), torch.randn(5, 4, dtype=torch.float64)
    assert torch.allclose(mca(inner, outer), cross_attention(inner, outer, outer))


def test_mca_shapes_and_outer_order():
    net = build_net(seed=7, dtype=torch.float64)
    inner, outer = torch.randn(6, 32, dtype=torch.float64), torch.randn(9, 32, dtype=torch.float64)
    fused = mca_forward(inner, outer, net)
    assert fused.shape == (6, 32)
    assert torch.allclose(mca_forward(inner, outer[torch.randperm(9)], net), fused, atol=1e-12)


def test_mca_empty_partition_fallback():
    mca = MultiCrossAttention(8, 3)
    inner = torch.randn(4, 8)
    assert torch.equal(mca(inner, torch.zeros(0, 8)), inner)
    assert torch.equal(mca(torch.zeros(0, 8), inner), inner)


def test_mca_gradients_match_finite_differences():
    mca = MultiCrossAttention(6, 3).double()
    inner = torch.randn(4, 6, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    outer = torch.randn(5, 6, dtype=torch.float64, generator=torch.Generator().manual_seed(2))
    errors = check_gradients(mca, lambda m: (m(inner, outer) ** 2).sum(), samples_per_tensor=None)
    assert set(errors) == {'w_q', 'w_k', 'w_v', 'w_o'}
    assert max(errors.values()) < 1e-4


def test_classifier_hand_values():
    net = build_net(NetConfig(num_classes=5))
    with torch.no_grad():
        net.fc.weight.zero_()
        net.fc.bias.zero_()
    pred = classify(torch.randn(3, 32), net)
    assert torch.allclose(pred.probabilities, torch.full((5,), 0.2))
    logits = torch.randn(5)
    shifted = logits + 7.5
    assert torch.argmax(torch.softmax(shifted, -1)) == torch.argmax(torch.softmax(logits, -1))
    random = classify(torch.randn(4, 32), build_net(seed=8))
    assert float(random.probabilities.sum()) == pytest.approx(1.0, abs=1e-6)


def test_cross_entropy_hand_values():
    certain = Prediction(torch.tensor([9.0, 0.0]), torch.tensor([1.0, 0.0], dtype=torch.float64))
    assert float(cross_entropy(certain, 0)) == 0.0
    logits = torch.zeros(10, dtype=torch.float64)
    uniform = Prediction(logits, torch.softmax(logits, -1))
    assert abs(float(cross_entropy(uniform, 3)) - math.log(10)) < 1e-9
    impossible = Prediction(torch.tensor([0.0, 9.0]), torch.tensor([0.0, 1.0], dtype=torch.float64))
    assert float(cross_entropy(impossible, 0)) == pytest.approx(-math.log(1e-12))
    with pytest.raises(RejectedInputError):
        cross_entropy(uniform, 10)


def test_cross_entropy_gradient_is_probabilities_minus_onehot():
    logits = torch.tensor([0.3, -1.2, 2.0, 0.5], dtype=torch.float64, requires_grad=True)
    loss = cross_entropy(Prediction(logits, torch.softmax(logits, -1)), 2)
    (grad,) = torch.autograd.grad(loss, logits)
    expected = torch.softmax(logits, -1).detach() - torch.nn.functional.one_hot(torch.tensor(2), 4).double()
    assert torch.allclose(grad, expected, atol=1e-12)
    eps = 1e-6
    with torch.no_grad():
        for i in range(4):
            bump = torch.zeros(4, dtype=torch.float64)
            bump[i] = eps
            plus = cross_entropy(Prediction(logits + bump, torch.softmax(logits + bump, -1)), 2)
            minus = cross_entropy(Prediction(logits - bump, torch.softmax(logits - bump, -1)), 2)
            numeric = float(plus - minus) / (2 * eps)
            assert relative_error(float(grad[i]), numeric) < 1e-6


def test_zero_loss_region_has_zero_head_gradients():
    net = build_net(seed=9, dtype=torch.float64)
    features = torch.randn(3, 32, dtype=torch.float64)
    out = net.reconstruction_head(features)
    loss = reconstruction_loss(out, out.detach())
    grads = gradients(loss, net.reconstruction_head)
    assert all(not g.any() for g in grads.values())


def full_loss(cfg, clip, plan, inside):
    def loss_fn(net):
        _, mae_loss = mae_forward(clip, plan.token_mask, net)
        tensor = torch.as_tensor(clip, dtype=torch.float64)
        return mae_loss + cross_entropy(net.finetune_forward(tensor, inside), 1)
    return loss_fn


def test_backward_is_deterministic():
    cfg = NetConfig()
    net = build_net(cfg, seed=10, dtype=torch.float64)
    _, plan = micro_plan(cfg)
    loss = full_loss(cfg, micro_clip(10), plan, token_inside_flags(cfg, BOX))(net)
    first, second = gradients(loss, net), gradients(loss, net)
    assert all(torch.equal(first[k], second[k]) for k in first)


@pytest.mark.slow
def test_full_network_gradcheck():
    cfg = NetConfig()
    net = build_net(cfg, seed=11, dtype=torch.float64)
    _, plan = micro_plan(cfg)
    output_projections = {name for name, _ in net.named_parameters() if name.endswith('w_o')}
    errors = check_gradients(net, full_loss(cfg, micro_clip(11), plan, token_inside_flags(cfg, BOX)),
                             samples_per_tensor=6, full_size=256, full_names=output_projections)
    assert set(errors) == {name for name, _ in net.named_parameters()}
    worst = max(errors, key=errors.get)
    assert errors[worst] < 1e-4, f"{worst}: {errors[worst]:.2e}"


@pytest.mark.slow
def test_small_network_gradcheck_every_entry():
    cfg = NetConfig(clip_dims=(4, 16, 16, 1), tube_dims=(4, 8, 8), d_model=8, heads=2, mca_heads=2)
    box = MotionBox(0, 0, 8, 8)
    net = build_net(cfg, seed=14, dtype=torch.float64)
    _, plan = motion_plan((4, 16, 16), cfg.tube_dims, box, 0.75, 0.75, 14)
    clip = micro_clip(14, cfg)
    errors = check_gradients(net, full_loss(cfg, clip, plan, token_inside_flags(cfg, box)), samples_per_tensor=None)
    assert set(errors) == {name for name, _ in net.named_parameters()}
    worst = max(errors, key=errors.get)
    assert errors[worst] < 1e-4, f"{worst}: {errors[worst]:.2e}"


def test_linear_head_pools_all_tokens():
    cfg = NetConfig(head='linear')
    net = build_net(cfg, seed=12)
    pred = net.finetune_forward(torch.as_tensor(micro_clip(12), dtype=torch.float32), token_inside_flags(cfg, BOX))
    assert pred.probabilities.shape == (2,)


def test_build_net_is_seeded_and_isolated():
    state = torch.get_rng_state()
    a, b = build_net(seed=13), build_net(seed=13)
    assert torch.equal(state, torch.get_rng_state())
    assert all(torch.equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))


def test_checkpoint_roundtrip_restores_net():
    net = build_net(seed=14)
    sink = io.BytesIO()
    CheckpointCodec().encode(net_tensors(net), sink)
    tensors = CheckpointCodec().decode(io.BytesIO(sink.getvalue()))
    restored = load_net_tensors(build_net(seed=15), tensors)
    assert all(torch.equal(x, y) for x, y in zip(net.state_dict().values(), restored.state_dict().values()))
    del tensors['fc.bias']
    with pytest.raises(RejectedInputError, match="missing"):
        load_net_tensors(build_net(), tensors)
    load_net_tensors(build_net(), tensors, strict=False)
