"""
Shared fixtures. Environment is redirected before any project module is
imported so settings, logs and the run registry land in a temp directory.
"""
import os
import tempfile
from pathlib import Path

_SESSION_DIR = Path(tempfile.mkdtemp(prefix="mole-tests-"))
os.environ.setdefault("MOLE_OUTPUT_DIR", str(_SESSION_DIR / "runs"))
os.environ.setdefault("LOG_FILE", str(_SESSION_DIR / "logs" / "mole.log"))
os.environ.setdefault("DATABASE_URL", f"sqlite:///{_SESSION_DIR / 'registry.db'}")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

import database  # noqa: E402
from models import ExperimentConfig, LayerSpec, RoutingConfig, build_config  # noqa: E402
from services.mole import init_layer  # noqa: E402


@pytest.fixture
def registry(tmp_path):
    """Fresh SQLite run registry per test"""
    database.configure(f"sqlite:///{tmp_path / 'registry.db'}")
    database.init_db()
    yield database
    database.configure(os.environ["DATABASE_URL"])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dims():
    return LayerSpec(input_dim=8, output_dim=6, rank=2, lora_alpha=4.0)


@pytest.fixture
def trained_like_layer(small_dims):
    """
    A layer with non-trivial B and W_g so every gradient path is active
    """
    cfg = RoutingConfig(n_experts=4, top_p=0.75, keep_top_k=2, entropy_threshold=0.9, entropic_index=1.1)
    layer = init_layer(small_dims, cfg, 7)
    gen = np.random.default_rng(99)
    for expert in layer.experts:
        expert.b[...] = gen.normal(scale=0.5, size=expert.b.shape)
    layer.router.w_g[...] = gen.normal(scale=0.8, size=layer.router.w_g.shape)
    return layer


@pytest.fixture
def tiny_config():
    """A fast end-to-end experiment (a few dozen steps)"""
    return build_config(
        ExperimentConfig().model_dump(mode="json"),
        {
            "layer.input_dim": 8,
            "layer.output_dim": 6,
            "layer.rank": 2,
            "layer.lora_alpha": 4.0,
            "task.input_dim": 8,
            "task.output_dim": 6,
            "task.samples_per_cluster": 16,
            "train.steps": 30,
            "train.batch_size": 8,
            "train.round_length": 10,
            "train.seed": 3,
            "task.seed": 3,
        },
    )
