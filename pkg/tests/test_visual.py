import math

import numpy as np
import pytest
import torch

from avdub.errors import ValidationError
from avdub.visual import (AVFusion, Adapter, FeatureStreams, adapt, fuse_sequence, fuse_step,
                          lookahead_index, upsample_2x)



@pytest.fixture(autouse=True)
def float64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


def gelu_ref(v):
    return 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0)))


def random_fusion(d, use_face=True, seed=0):
    torch.manual_seed(seed)
    f = AVFusion(d, use_face=use_face, zero_init_face=False)
    return f


def test_feature_streams_contract():
    fs = FeatureStreams(np.zeros((5, 24)), np.zeros((5, 8)))
    assert fs.num_frames == 5 and fs.num_tokens == 10
    assert fs.slice(2).num_frames == 3
    with pytest.raises(ValidationError):
        FeatureStreams(np.zeros((5, 24)), np.zeros((4, 8)))
    with pytest.raises(ValidationError):
        FeatureStreams(np.full((2, 3), np.inf), np.zeros((2, 1)))
    with pytest.raises(ValidationError):
        FeatureStreams(np.zeros((2, 3)), np.zeros((2, 1)), fps=30)


def test_adapt_zero_and_shape():
    a = Adapter(8, 16)
    for p in a.parameters():
        torch.nn.init.zeros_(p)
    assert torch.count_nonzero(adapt(torch.randn(3, 8), a)) == 0
    assert adapt(torch.randn(3, 8), Adapter(8, 16)).shape == (3, 16)
    with pytest.raises(ValidationError):
        adapt(torch.randn(3, 7), a)


def test_adapt_matches_closed_form():
    torch.manual_seed(4)
    a = Adapter(3, 2, hidden=4)
    x = [0.5, -1.25, 2.0]
    w1, b1 = a.fc1.weight.tolist(), a.fc1.bias.tolist()
    w2, b2 = a.fc2.weight.tolist(), a.fc2.bias.tolist()
    hidden = [gelu_ref(sum(w * xi for w, xi in zip(row, x)) + b) for row, b in zip(w1, b1)]
    want = [sum(w * h for w, h in zip(row, hidden)) + b for row, b in zip(w2, b2)]
    got = adapt(torch.tensor([x]), a)[0].tolist()
    assert got == pytest.approx(want, abs=1e-12)


def test_adapt_is_not_linear():
    torch.manual_seed(0)
    a = Adapter(6, 12)
    x = torch.randn(10, 6)
    assert not torch.allclose(adapt(2 * x, a), 2 * adapt(x, a))


def test_upsample():
    x = torch.tensor([[1.0], [2.0], [3.0]])
    assert upsample_2x(x).flatten().tolist() == [1, 1, 2, 2, 3, 3]
    one = upsample_2x(torch.tensor([[7.0, 8.0]]))
    assert torch.equal(one[0], one[1])
    y = torch.randn(5, 4)
    assert torch.equal(upsample_2x(y)[::2], y)
    with pytest.raises(ValidationError):
        upsample_2x(torch.zeros(0, 4))


def test_zero_fusion_is_identity():
    f = AVFusion(6, zero_init_lip=True, zero_init_face=True)
    h = torch.randn(6)
    assert torch.equal(fuse_step(h, torch.randn(4, 6), torch.randn(4, 6), 1, f), h)


def test_lip_only_equals_zero_face():
    full = random_fusion(5)
    lip_only = AVFusion(5, use_face=False)
    lip_only.lip_fuse.load_state_dict(full.lip_fuse.state_dict())
    torch.nn.init.zeros_(full.face_fuse.weight)
    torch.nn.init.zeros_(full.face_fuse.bias)
    h, lip, face = torch.randn(5), torch.randn(6, 5), torch.randn(6, 5)
    for t in range(6):
        assert torch.equal(fuse_step(h, lip, face, t, full), fuse_step(h, lip, None, t, lip_only))


def test_last_step_clamps():
    f = random_fusion(4)
    h, lip, face = torch.randn(4), torch.randn(5, 4), torch.randn(5, 4)
    extended = fuse_step(h, torch.cat([lip, lip[-1:]]), torch.cat([face, face[-1:]]), 4, f)
    assert torch.allclose(fuse_step(h, lip, face, 4, f), extended, atol=0, rtol=0)
    assert lookahead_index(4, 5) == 4 and lookahead_index(0, 5) == 1


def test_step_range_checked():
    f = random_fusion(3)
    with pytest.raises(ValidationError):
        fuse_step(torch.zeros(3), torch.zeros(4, 3), None, 4, f)
    with pytest.raises(ValidationError):
        fuse_step(torch.zeros(3), torch.zeros(4, 3), None, -1, f)


def test_future_rows_do_not_leak():
    f = random_fusion(4, seed=2)
    h, lip, face = torch.randn(4), torch.randn(8, 4), torch.randn(8, 4)
    for t in range(8):
        base = fuse_step(h, lip, face, t, f)
        lip2, face2 = lip.clone(), face.clone()
        lip2[t + 2:] += 100.0
        face2[t + 2:] -= 100.0
        j = lookahead_index(t, 8)
        lip2[:j] += 50.0              # earlier rows are not read either
        assert torch.equal(fuse_step(h, lip2, face2, t, f), base)


def test_sequence_matches_steps():
    f = random_fusion(4, seed=3)
    h, lip, face = torch.randn(6, 4), torch.randn(6, 4), torch.randn(6, 4)
    seq = fuse_sequence(h, lip, face, f)
    for t in range(6):
        assert torch.allclose(seq[t], fuse_step(h[t], lip, face, t, f))
