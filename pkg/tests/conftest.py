import dataclasses
from pathlib import Path

import pytest

from ctxmatch.encoder import EncoderConfig
from ctxmatch.matcher import FusionConfig, TrainConfig
from ctxmatch.pipeline import Paths, RunConfig
from ctxmatch.selector import SelectorConfig
from ctxmatch.synthetic import experiment_config

DATA = Path(__file__).resolve().parent.parent / "data" / "synthetic"


def tiny_config(out_dir, seed=0) -> RunConfig:
    """Bundled synthetic data with a model small enough for unit tests."""
    paths = {"train_pairs": DATA / "train.tsv", "test_pairs": DATA / "test.tsv", "corpus": DATA / "corpus.txt"}
    cfg = experiment_config(paths, str(out_dir), seed)
    small = EncoderConfig(layers=1, heads=2, model_dim=16, ffn_dim=32, max_seq_len=24, pooling="mean")
    return dataclasses.replace(cfg, encoder=small, fusion=FusionConfig(1),
                               train=TrainConfig(3e-3, 2, 16), selector_train=TrainConfig(3e-3, 1, 32))


@pytest.fixture
def tiny(tmp_path):
    return tiny_config(tmp_path / "run")


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
