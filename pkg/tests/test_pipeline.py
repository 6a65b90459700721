import dataclasses
import json
import logging

import pytest

from ctxmatch import cli
from ctxmatch.decision import EvalReport, read_prediction_log, read_report
from ctxmatch.pipeline import (
    ABLATIONS,
    AblationRun,
    Pipeline,
    RunConfig,
    StageError,
    decide,
    derive_seed,
    report_ablation,
    run_ablation,
    run_pipeline,
)

from conftest import tiny_config


def with_out(cfg, out, **kw):
    return dataclasses.replace(cfg, paths=dataclasses.replace(cfg.paths, output_dir=str(out)), **kw)


@pytest.fixture(scope="module")
def finished(tmp_path_factory):
    cfg = tiny_config(tmp_path_factory.mktemp("pipe") / "run")
    reports = run_pipeline(cfg)
    return cfg, reports


def test_full_run_writes_artifacts(finished):
    cfg, reports = finished
    out = Pipeline(cfg).out
    for name in ("index.json", "contexts.train.tsv", "pseudo_labels.tsv", "baseline.ckpt", "selector.ckpt",
                 "matcher.ckpt", "predictions.tsv", "report.tsv", "summary.txt"):
        assert (out / name).is_file(), name
    dataset, parsed = read_report(out / "report.tsv")
    assert dataset.startswith("test.tsv:")
    assert set(parsed) == {"final", "baseline", "context"}
    assert parsed["final"].total == 40
    assert not list(out.glob("*.partial"))


def test_second_run_reuses_every_stage(finished, caplog):
    cfg, _ = finished
    pipe = Pipeline(cfg)
    with caplog.at_level(logging.INFO, logger="ctxmatch.pipeline"):
        pipe.evaluate()
    assert pipe.ran == []
    assert "retrieve" in pipe.reused
    assert any("stage retrieve: reusing cached outputs" in r.getMessage() for r in caplog.records)


def test_changed_config_invalidates_downstream_only(finished, tmp_path):
    cfg, _ = finished
    pipe = Pipeline(with_out(cfg, tmp_path / "copy", confidence_gate=0.3))
    pipe.adopt(Pipeline(cfg).out)
    pipe.evaluate()
    assert pipe.ran == ["evaluate"]


def test_force_reruns(finished, tmp_path):
    cfg, _ = finished
    pipe = Pipeline(with_out(cfg, tmp_path / "forced"), force=True)
    pipe.adopt(Pipeline(cfg).out)
    pipe.index()
    assert pipe.ran == ["ingest", "index"]


def test_stage_failure_names_stage_and_leaves_partial(tmp_path, monkeypatch):
    cfg = tiny_config(tmp_path / "run")
    pipe = Pipeline(cfg)

    def boom(*a, **k):
        (pipe.out / "index.json.partial").write_text("half")
        raise RuntimeError("disk full")

    monkeypatch.setattr("ctxmatch.pipeline.build_index", boom)
    with pytest.raises(StageError, match="'index'.*disk full"):
        pipe.index()
    assert (pipe.out / "index.json.partial").exists()
    assert not (pipe.out / "index.json").exists()


def test_rs_off_differs_on_disagreement_fixture():
    # baseline unsure, context model confident: the combined rule says 0, y_bar alone says 1
    y_hat, y_bar = {0: 0.5, 1: 0.9, 2: 0.2}, {0: 0.9, 1: 0.9, 2: 0.1}
    full = [p.label_out for p in decide(y_hat, y_bar, True)]
    rs_off = [p.label_out for p in decide(y_hat, y_bar, False)]
    assert full == [0, 1, 0] and rs_off == [1, 1, 0]
    with pytest.raises(ValueError, match=r"\[3\]"):
        decide(y_hat, {**y_bar, 3: 0.5})


def test_rs_off_run_reuses_models_and_changes_only_decision(finished, tmp_path):
    cfg, _ = finished
    pipe = Pipeline(with_out(cfg, tmp_path / "rs", ablation="rs_off"))
    pipe.adopt(Pipeline(cfg).out)
    pipe.evaluate()
    assert pipe.ran == ["evaluate"]
    for pid, yh, yb, label in read_prediction_log(pipe.out / "predictions.tsv"):
        assert label == int(yb >= 0.5)
    for pid, yh, yb, label in read_prediction_log(Pipeline(cfg).out / "predictions.tsv"):
        assert label == int(yh + yb - 1 >= 0.5)


def test_same_seed_runs_are_byte_identical(finished, tmp_path):
    cfg, _ = finished
    again = with_out(cfg, tmp_path / "again")
    run_pipeline(again)
    a = (Pipeline(cfg).out / "predictions.tsv").read_bytes()
    b = (Pipeline(again).out / "predictions.tsv").read_bytes()
    assert a == b
    assert (Pipeline(cfg).out / "matcher.ckpt").read_bytes() == (Pipeline(again).out / "matcher.ckpt").read_bytes()


def test_ablation_flags_change_the_right_knobs(tmp_path):
    cfg = tiny_config(tmp_path)
    seen = set()
    for mode in ABLATIONS:
        c = dataclasses.replace(cfg, ablation=mode)
        knobs = (c.selection_mode, c.effective_encoder.share_context_params, c.use_result_selector)
        seen.add(knobs)
    assert len(seen) == len(ABLATIONS)
    with pytest.raises(ValueError):
        dataclasses.replace(cfg, ablation="everything")


def test_config_round_trip_and_overrides(tmp_path):
    cfg = tiny_config(tmp_path)
    cfg.save(tmp_path / "c.json")
    back = RunConfig.load(tmp_path / "c.json")
    assert back == cfg
    changed = cfg.with_overrides({"train.epochs": 7, "seed": 3, "selector.K": 2})
    assert (changed.train.epochs, changed.seed, changed.selector.K) == (7, 3, 2)
    with pytest.raises(ValueError):
        cfg.with_overrides({"train.nope": 1})
    with pytest.raises(ValueError):
        RunConfig.from_dict({"bogus": 1})


def test_validate_reports_missing_paths(tmp_path):
    cfg = tiny_config(tmp_path)
    bad = dataclasses.replace(cfg, paths=dataclasses.replace(cfg.paths, corpus=str(tmp_path / "none.txt")))
    with pytest.raises(FileNotFoundError, match="paths.corpus"):
        bad.validate()


def test_derive_seed_is_stable():
    assert derive_seed(0, "matcher") == derive_seed(0, "matcher")
    assert derive_seed(0, "matcher") != derive_seed(1, "matcher")


def run(mode, acc, f1, dataset="d", ctx=None):
    tp = round(acc * 100)
    return AblationRun(mode, dataset, EvalReport(tp, 0, 0, 100 - tp), ctx)


def test_report_ablation_arithmetic():
    runs = [AblationRun("none", "d", EvalReport(40, 10, 40, 10)),
            AblationRun("cs_topk", "d", EvalReport(30, 20, 30, 20)),
            AblationRun("rs_off", "d", EvalReport(40, 10, 40, 10))]
    table = report_ablation(runs).splitlines()
    assert table[1].split()[:5] == ["none", "80.00", "+0.00", "80.00", "+0.00"]
    assert table[2].split()[:5] == ["cs_topk", "60.00", "-20.00", "60.00", "-20.00"]
    assert table[3].split()[2] == "+0.00"


def test_report_ablation_rejections():
    with pytest.raises(ValueError, match="different datasets"):
        report_ablation([run("none", 0.5, 0.5), run("rs_off", 0.5, 0.5, dataset="other")])
    with pytest.raises(ValueError):
        report_ablation([run("none", 0.5, 0.5)])


def test_run_ablation_table(tmp_path):
    cfg = tiny_config(tmp_path / "abl")
    runs, table = run_ablation(cfg, ["none", "rs_off"])
    assert [r.mode for r in runs] == ["none", "rs_off"]
    assert (tmp_path / "abl" / "ablation.txt").read_text().strip() == table


def test_cli_subcommands(tmp_path, capsys):
    cfg = tiny_config(tmp_path / "cli")
    cfg.save(tmp_path / "c.json")
    assert cli.main(["retrieve", "-q", "--config", str(tmp_path / "c.json")]) == 0
    assert "ran ['ingest', 'index', 'retrieve']" in capsys.readouterr().out
    assert cli.main(["retrieve", "-q", "--config", str(tmp_path / "c.json")]) == 0
    assert "ran nothing" in capsys.readouterr().out
    assert cli.main(["pipeline", "-q", "--config", str(tmp_path / "c.json"), "--ablation", "cs_topk"]) == 0
    assert "ablation: cs_topk" in capsys.readouterr().out
    assert cli.main(["evaluate", "-q", "--config", str(tmp_path / "c.json"), "--set", "paths.corpus=nope"]) == 2


def test_cli_stage_failure_exit_code(tmp_path, capsys, monkeypatch):
    cfg = tiny_config(tmp_path / "cli")
    cfg.save(tmp_path / "c.json")
    monkeypatch.setattr("ctxmatch.pipeline.build_index", lambda *a, **k: 1 / 0)
    assert cli.main(["index", "-q", "--config", str(tmp_path / "c.json")]) == 1
    assert "stage 'index' failed" in capsys.readouterr().err


def test_cli_synth(tmp_path):
    assert cli.main(["synth", str(tmp_path / "s"), "--pairs", "20"]) == 0
    cfg = json.loads((tmp_path / "s" / "config.json").read_text())
    assert cfg["paths"]["train_pairs"].endswith("train.tsv")
    assert len((tmp_path / "s" / "test.tsv").read_text().splitlines()) == 4
