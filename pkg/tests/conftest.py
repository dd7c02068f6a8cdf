import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ecgssl.config import RunConfig  # noqa: E402

TINY_OVERRIDES = {
    "data.n_records": 20,
    "data.fs": 100.0,
    "data.duration": 3.0,
    "data.target_fs": 50.0,
    "encoder_time.stages": [[4, 1, 2], [8, 1, 2]],
    "encoder_time.feature_dim": 8,
    "encoder_time.se_reduction": 2,
    "encoder_freq.stages": [[4, 1, 2], [8, 1, 2]],
    "encoder_freq.feature_dim": 8,
    "encoder_freq.se_reduction": 2,
    "selfkd.K": 8,
    "selfkd.steps": 2,
    "selfkd.batch_size": 8,
    "selfkd.head_hidden": [16],
    "augment.n_local_views": 2,
    "finetune.epochs": 1,
    "finetune.batch_size": 8,
    "finetune.hidden": 16,
    "finetune.gate_hidden": 4,
    "folds": 2,
}


def tiny_config(**extra) -> RunConfig:
    return RunConfig().with_overrides({**TINY_OVERRIDES, **extra})


@pytest.fixture
def tiny_cfg() -> RunConfig:
    return tiny_config()


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"CRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}")
