import numpy as np
import pytest
import torch

from monovel.errors import ConfigurationError
from monovel.fusion import MSAF, attention_map, msaf_fuse
from monovel.geometry import BoundingBox2D, VehicleState, backproject_bottom_center
from monovel.head import RawPrediction, VelocityHead, decode_batch, decode_state, encode_residual

C, M, SP, FM, L = 5, 4, 6, 7, 9


def _inputs(K=3, dtype=torch.float64):
    return (torch.randn(K, L, C, dtype=dtype), torch.randn(K, L, M, dtype=dtype),
            torch.randn(K, SP, dtype=dtype), torch.randn(K, FM, dtype=dtype))


@pytest.fixture
def block():
    return MSAF(C, M, SP, FM, d_q=8, d_v=8).double()


def test_output_dim(block):
    c, m, s, f = _inputs()
    assert block(c, m, s, f).shape == (3, SP + FM)
    assert block.out_dim == SP + FM


def test_attention_rows_are_distributions(block):
    c, m, s, _ = _inputs(K=4)
    S = block.attention_map(c, m, s)
    assert S.shape == (4, L, L)
    assert torch.allclose(S.sum(-1), torch.ones(4, L, dtype=torch.float64), atol=1e-12)
    assert torch.all(S > 0) and torch.all(S < 1)


def test_zero_fusion_weights_give_plain_concat(block):
    c, m, s, f = _inputs()
    with torch.no_grad():
        block.W_F.weight.zero_()
        block.W_F.bias.zero_()
    assert torch.equal(block(c, m, s, f), torch.cat([s, f], dim=1))


def test_identical_keys_give_uniform_attention(block):
    c, m, s, _ = _inputs(K=2)
    c = c[:, :1].expand(-1, L, -1).contiguous()
    S = block.attention_map(c, m, s)
    assert torch.allclose(S, torch.full_like(S, 1.0 / L), atol=1e-12)


def test_scaling_keys_sharpens_attention(block):
    c, m, s, _ = _inputs(K=1)
    W, b = block.W_K.weight.detach().clone(), block.W_K.bias.detach().clone()
    peaks = []
    for scale in (1.0, 10.0, 100.0):
        with torch.no_grad():
            block.W_K.weight.copy_(scale * W)
            block.W_K.bias.copy_(scale * b)
        peaks.append(block.attention_map(c, m, s).max(dim=-1).values)
    assert torch.all(peaks[1] >= peaks[0]) and torch.all(peaks[2] >= peaks[1])
    assert peaks[2].min() > 0.9


def test_scaled_attention_divides_logits():
    torch.manual_seed(0)
    a = MSAF(C, M, SP, FM, d_q=16, d_v=8).double()
    b = MSAF(C, M, SP, FM, d_q=16, d_v=8, scaled_attention=True).double()
    b.load_state_dict(a.state_dict())
    c, m, s, _ = _inputs(K=1)
    with torch.no_grad():
        b.W_K.weight.mul_(4.0)
        b.W_K.bias.mul_(4.0)
    assert torch.allclose(a.attention_map(c, m, s), b.attention_map(c, m, s), atol=1e-12)


def test_context_shortcut():
    blk = MSAF(C, M, SP, FM, d_q=8, d_v=8, shortcut="context", context_dim=11).double()
    c, m, s, f = _inputs()
    f_c = torch.randn(3, 11, dtype=torch.float64)
    with torch.no_grad():
        blk.W_F.weight.zero_()
        blk.W_F.bias.zero_()
    assert torch.equal(blk(c, m, s, f, f_c), torch.cat([f_c, f], dim=1))


def test_unbatched_helpers(block):
    c, m, s, f = _inputs(K=1)
    assert torch.equal(msaf_fuse(block, c[0], m[0], s[0], f[0]), block(c, m, s, f)[0])
    assert attention_map(block, c[0], m[0], s[0]).shape == (L, L)


def test_dimension_mismatch_is_configuration_error(block):
    c, m, s, f = _inputs()
    with pytest.raises(ConfigurationError):
        block(c[..., :-1], m, s, f)
    with pytest.raises(ConfigurationError):
        MSAF(C, M, SP, FM, shortcut="nope")


def test_head_output_and_zero_weights():
    head = VelocityHead(10, hidden=6).double()
    x = torch.randn(5, 10, dtype=torch.float64)
    assert head(x).shape == (5, 3)
    for p in head.parameters():
        torch.nn.init.zeros_(p)
    assert head.predict(x[0]) == RawPrediction(0.0, 0.0, 0.0)
    with pytest.raises(ConfigurationError):
        head(torch.zeros(2, 9, dtype=torch.float64))


def _box_at_depth(cam, z, b_x, height=10.0):
    bottom = cam.c_y + cam.f_y * cam.height_above_ground / z
    return BoundingBox2D(b_x, bottom - height / 2, 12.0, height)


def test_decode_zero_residual_is_reference(cam):
    box = _box_at_depth(cam, 25.0, 130.0)
    st = decode_state(RawPrediction(0.0, 1.0, -2.0), box, cam)
    assert st.position[1] == backproject_bottom_center(box, cam)[1]
    assert st.velocity == (1.0, -2.0)


def test_decode_centered_box_has_zero_lateral(cam):
    for residual in (-3.0, 0.0, 7.5):
        st = decode_state(RawPrediction(residual, 0.0, 0.0), _box_at_depth(cam, 30.0, cam.c_x), cam)
        assert st.position[0] == 0.0


def test_decode_hand_example(cam):
    box = _box_at_depth(cam, 20.0, cam.c_x + cam.f_x / 10)
    st = decode_state(RawPrediction(1.5, 0.0, 0.0), box, cam)
    assert st.position[0] == pytest.approx(2.15, abs=1e-9)
    assert st.position[1] == pytest.approx(21.5, abs=1e-9)
    assert st.distance == pytest.approx(np.hypot(2.15, 21.5), abs=1e-9)


def test_encode_residual_inverts_decode(cam):
    box = _box_at_depth(cam, 18.0, 70.0)
    st = decode_state(RawPrediction(-1.25, 0.5, 0.5), box, cam)
    assert encode_residual(st, box, cam) == pytest.approx(-1.25, abs=1e-12)
    target = VehicleState.from_kinematics((0.0, 40.0), (0.0, 0.0))
    assert encode_residual(target, box, cam) == pytest.approx(40.0 - 18.0, abs=1e-9)


def test_decode_batch_matches_scalar_decode(cam):
    boxes = [_box_at_depth(cam, z, bx) for z, bx in ((12.0, 40.0), (33.0, 150.0))]
    raw = torch.tensor([[0.5, 1.0, -1.0], [-2.0, 0.0, 3.0]], dtype=torch.float64)
    z_ref = torch.tensor([backproject_bottom_center(b, cam)[1] for b in boxes], dtype=torch.float64)
    lateral = torch.tensor([(b.b_x - cam.c_x) / cam.f_x for b in boxes], dtype=torch.float64)
    states = decode_batch(raw, z_ref, lateral)
    for k, b in enumerate(boxes):
        ref = decode_state(RawPrediction(*raw[k].tolist()), b, cam)
        np.testing.assert_allclose(states[k].numpy(), ref.as_array(), rtol=0, atol=1e-12)
