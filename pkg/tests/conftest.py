import numpy as np
import pytest
import torch

torch.set_num_threads(1)


def t64(a, grad=False):
    return torch.tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """16-video corpus shared by the training/eval/cli tests."""
    from xdlf.datagen import CorpusConfig, build_corpus

    root = tmp_path_factory.mktemp("corpus16")
    cfg = CorpusConfig(n_videos=16, clips_per_video=2, clip_len=4, image_size=32,
                       splits=(("train", 0.5), ("val", 0.25), ("test", 0.25)), seed=3)
    return build_corpus(root, cfg)


# pass/fail lines appended by test_acceptance.py, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
