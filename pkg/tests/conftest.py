import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mmear import dataset as D
from mmear import handpose as hp
from mmear import models as M

# (sort key, label, passed, detail) rows filled in by test_acceptance.py
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for _, label, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {label:>3}: {status} - {detail}")


@pytest.fixture(scope="session")
def tiny_spec():
    return D.SynthSpec(
        n_takes=4,
        frames_per_take=120,
        n_verbs=2,
        n_objects=2,
        motion_noise=0.02,
        feature_noise=0.05,
        seed=1,
        feature_dim=16,
        segments_per_take=3,
    )


@pytest.fixture(scope="session")
def tiny_dataset(tiny_spec):
    takes, meta = D.synth_generate(tiny_spec)
    return takes, meta


@pytest.fixture(scope="session")
def tiny_prepared(tiny_dataset):
    takes, meta = tiny_dataset
    topo = hp.SkeletonTopology()
    return [D.prepare_take(t, topo) for t in takes], meta


@pytest.fixture()
def tiny_model_cfg():
    return M.ModelConfig(
        d_rgb=16,
        d_hp=8,
        hp_hidden=12,
        head_hidden=16,
        reference=M.ReferenceExtractorConfig(image_size=16, patch_size=8, hidden=8),
        temporal=M.TemporalMlpConfig(depth=1),
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
