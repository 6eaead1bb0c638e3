import shutil

import numpy as np
import pytest

from synthloop.benchmark import BenchmarkSpec, make_benchmark
from synthloop.pipeline import Workspace, WorkbenchConfig


@pytest.fixture(scope="session")
def bundle():
    return make_benchmark(BenchmarkSpec(), seed=7)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def tiny_config(**overrides):
    base = dict(
        train_frames=36,
        synthetic_frames=36,
        test_frames=30,
        orbit_frames=10,
        background_frames=10,
        mix_total=48,
        seeds=(0, 1),
        epochs=2,
        shap_masks=40,
        shap_samples=2,
        shap_grid=(2, 4),
        shap_backgrounds=4,
        diagnose_bin_width=45.0,
        min_bin_misclassified=1,
        target_map50=0.99,
        max_iterations=2,
    )
    base.update(overrides)
    return WorkbenchConfig(**base)


@pytest.fixture(scope="session")
def tiny_ws_template(tmp_path_factory):
    root = tmp_path_factory.mktemp("tinyws") / "ws"
    ws = Workspace(root)
    ws.init(tiny_config())
    return root


@pytest.fixture()
def tiny_ws(tiny_ws_template, tmp_path):
    root = tmp_path / "ws"
    shutil.copytree(tiny_ws_template, root)
    return Workspace(root)
