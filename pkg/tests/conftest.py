import numpy as np
import pytest

from figsearch.dataset import CorpusSpec, SplitRatios, balance_and_split, \
    generate_synthetic_corpus
from figsearch.network import BranchConfig, DualNetConfig, init_params


@pytest.fixture(scope="session")
def tiny_cfg():
    """Small dual net: 2 conv blocks per branch, D=8, 8x8 input."""
    return DualNetConfig(
        input_shape=(8, 8, 1), type_count=3, class_count=4,
        lower=BranchConfig(((4, 2), (6, 2)), feature_dim=8),
        upper=BranchConfig(((4, 2), (6, 2)), feature_dim=8))


@pytest.fixture
def tiny_params(tiny_cfg):
    return init_params(tiny_cfg, seed=5, dtype=np.float64)


@pytest.fixture(scope="session")
def small_corpus():
    """2 types x 3 classes x 6 examples at 16px, split 6:1:1."""
    spec = CorpusSpec(t_types=2, k_classes=3, per_cell=6, image_size=16, seed=3)
    corpus = generate_synthetic_corpus(spec)
    train, val, test = balance_and_split(corpus, SplitRatios(),
                                         target_per_class=16, seed=3)
    return {"spec": spec, "corpus": corpus,
            "train": train, "val": val, "test": test}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for status, tag in (("passed", "PASS"), ("failed", "FAIL")):
        for rep in terminalreporter.stats.get(status, []):
            if "test_acceptance" in rep.nodeid and rep.when == "call":
                lines.append(f"{tag}: {rep.nodeid.split('::')[-1]}")
    if lines:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for line in sorted(lines, key=lambda s: s.split(": ")[1]):
            terminalreporter.write_line("  " + line)
