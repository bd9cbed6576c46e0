import pytest

from nrvqa.config import DataConfig, ModelConfig, TrainConfig
from nrvqa.data import load_manifest
from nrvqa.synthetic import make_synthetic_corpus

ACCEPTANCE_RESULTS = []


def tiny_model_config(**kw):
    base = dict(input_size=[32, 32], stage_dims=[[8, 8, 16], [4, 4, 32]], token_dim=16,
                embed_dim=16, fusion_heads=2, temporal_heads=2)
    base.update(kw)
    return ModelConfig(**base)


def desk_config(tmp_path, **kw):
    """The desk-scale training setup used by the smoke and ablation runs."""
    cfg = dict(batch_size=8, lr0=1e-2, epochs=200, seed=0, eval_every=50,
               checkpoint_dir=str(tmp_path / "run"), model=tiny_model_config(),
               data=DataConfig(frame_count=4))
    cfg.update(kw)
    return TrainConfig(**cfg)


@pytest.fixture(scope="session")
def corpus12(tmp_path_factory):
    """12 synthetic clips, 2 bitrate tiers x 6, labels separable by tier."""
    root = tmp_path_factory.mktemp("corpus12")
    return make_synthetic_corpus(root, n_per_tier=6, frames=8, size=(32, 32), seed=0)


@pytest.fixture(scope="session")
def labeled12(corpus12):
    from nrvqa.data import ingest_vmaf_scores

    return ingest_vmaf_scores(corpus12.scores, load_manifest(corpus12.manifest)).records


@pytest.fixture(scope="session")
def corpus40(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus40")
    return make_synthetic_corpus(root, n_per_tier=20, frames=8, size=(32, 32), seed=1, with_labels=True)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
