import pytest
import torch

from nrvqa.errors import ShapeError
from nrvqa.temporal import TemporalFusion, temporal_fuse, video_embedding

from gradient_cases import temporal_case


def fusion(D=8, layers=1, **kw):
    torch.manual_seed(0)
    return TemporalFusion(D, layers=layers, heads=2, max_frames=16, **kw).double().eval()


def test_single_frame_identity():
    f = fusion(layers=2).identity_init_().zero_positions_()
    z = torch.randn(1, 1, 8, dtype=torch.float64)
    assert torch.equal(video_embedding(z, f)[0], z[0, 0])
    assert torch.allclose(temporal_fuse(z, f), f.head(z[0, 0]), atol=1e-15)


def test_duplicated_frames_same_score():
    f = fusion().zero_positions_()
    z = torch.randn(2, 4, 8, dtype=torch.float64)
    doubled = z.repeat_interleave(2, dim=1)
    assert torch.allclose(f(z), f(doubled), atol=1e-12, rtol=0)


def test_one_finite_scalar_per_video():
    out = fusion()(torch.randn(3, 5, 8, dtype=torch.float64))
    assert out.shape == (3,) and torch.isfinite(out).all()


def test_video_embedding_shape_and_determinism():
    f = fusion()
    z = torch.randn(1, 6, 8, dtype=torch.float64)
    a, b = f.video_embedding(z), f.video_embedding(z.clone())
    assert a.shape == (1, 8) and torch.equal(a, b)


def test_permutations():
    f = fusion()
    with torch.no_grad():
        f.pos.normal_(std=1.0)
    z = torch.randn(1, 5, 8, dtype=torch.float64)
    perm = torch.tensor([4, 2, 0, 3, 1])
    assert not torch.allclose(f(z), f(z[:, perm]), atol=1e-6)
    f.zero_positions_()
    assert torch.allclose(f(z), f(z[:, perm]), atol=1e-12, rtol=0)


def test_list_input_and_errors():
    f = fusion()
    frames = [torch.randn(8, dtype=torch.float64) for _ in range(3)]
    assert torch.allclose(f(frames), f(torch.stack(frames)))
    with pytest.raises(ShapeError):
        f([])
    with pytest.raises(ShapeError):
        f([torch.randn(8, dtype=torch.float64), torch.randn(4, dtype=torch.float64)])
    with pytest.raises(ShapeError):
        f(torch.randn(1, 3, 4, dtype=torch.float64))
    with pytest.raises(ShapeError):
        f(torch.randn(1, 17, 8, dtype=torch.float64))
    with pytest.raises(ShapeError):
        f(torch.zeros(1, 0, 8, dtype=torch.float64))


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(seed):
    assert temporal_case(seed) < 1e-4
