"""Resumable end-to-end pipeline: ingest, index, retrieve, train, select, evaluate."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import decision
from .corpus import (
    CleaningRules,
    Context,
    PairDataset,
    load_context_store,
    load_pair_dataset,
    load_raw_corpus,
    sentence_id,
    write_context_store,
)
from .decision import EvalReport, MatchPrediction, confusion, result_select
from .encoder import EncoderConfig, Vocabulary, build_vocabulary, encode_ids
from .matcher import ContextMatcher, FusionConfig, MatchExample, TrainConfig, train_matcher
from .nn import checkpoint
from .retrieval import InvertedIndex, RetrievalParams, build_index, retrieve
from .selector import (
    BaselineScorer,
    SelectorConfig,
    SelectorModel,
    context_hash,
    make_pseudo_labels,
    read_pseudo_labels,
    select_many,
    train_selector,
    write_pseudo_labels,
)

log = logging.getLogger("ctxmatch.pipeline")

ABLATIONS = ("none", "share_off", "cs_random", "cs_topk", "rs_off")
SPLITS = ("train", "test")


@dataclass
class Paths:
    train_pairs: str = ""
    test_pairs: str = ""
    corpus: str = ""
    output_dir: str = "runs/default"


@dataclass(frozen=True)
class ScorerConfig:
    kind: str = "baseline"  # "baseline": trained baseline sentence encoder; "bag": seeded random embedding bag
    dim: int = 512

    def __post_init__(self):
        if self.kind not in ("baseline", "bag"):
            raise ValueError(f"unknown scorer kind {self.kind!r}")


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    cleaning: CleaningRules = field(default_factory=CleaningRules)
    retrieval: RetrievalParams = field(default_factory=RetrievalParams)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    selector_train: TrainConfig = field(default_factory=TrainConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    tokenizer: str = "word"
    min_token_freq: int = 1
    seed: int = 0
    ablation: str = "none"
    confidence_gate: float | None = None

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.tokenizer not in ("word", "char"):
            raise ValueError(f"tokenizer must be 'word' or 'char', got {self.tokenizer!r}")

    # ---- derived settings
    @property
    def selection_mode(self) -> str:
        return {"cs_random": "random", "cs_topk": "topk"}.get(self.ablation, "model")

    @property
    def effective_encoder(self) -> EncoderConfig:
        if self.ablation == "share_off":
            return dataclasses.replace(self.encoder, share_context_params=False)
        return self.encoder

    @property
    def use_result_selector(self) -> bool:
        return self.ablation != "rs_off"

    def validate(self) -> None:
        for name in ("train_pairs", "test_pairs", "corpus"):
            p = getattr(self.paths, name)
            if not p or not Path(p).is_file():
                raise FileNotFoundError(f"paths.{name}: {p!r} does not exist")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        kinds = {f.name: f.default_factory for f in dataclasses.fields(cls)
                 if f.default_factory is not dataclasses.MISSING}
        kwargs = {}
        for key, value in d.items():
            if key in kinds and isinstance(value, dict):
                proto = kinds[key]()
                kwargs[key] = type(proto)(**value)
            elif key in {f.name for f in dataclasses.fields(cls)}:
                kwargs[key] = value
            else:
                raise ValueError(f"unknown config key {key!r}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        """Apply dotted-key overrides such as ``{"encoder.layers": 1}``."""
        d = self.to_dict()
        for key, value in overrides.items():
            node = d
            parts = key.split(".")
            for p in parts[:-1]:
                if p not in node or not isinstance(node[p], dict):
                    raise ValueError(f"unknown config key {key!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ValueError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return RunConfig.from_dict(d)


def derive_seed(seed: int, name: str) -> int:
    return int.from_bytes(hashlib.sha256(f"{seed}:{name}".encode()).digest()[:4], "little")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class Pipeline:
    """Stage runner over one output directory.

    Each stage is keyed by a hash of its configuration slice and the digests of
    its input files. A stage whose manifest key matches and whose outputs exist
    is reused unless ``force`` is set. Outputs are written under a ``.partial``
    suffix and renamed only when the stage succeeds.
    """

    def __init__(self, config: RunConfig, force: bool = False):
        self.config = config
        self.force = force
        self.out = Path(config.paths.output_dir)
        self.ran: list[str] = []
        self.reused: list[str] = []

    # ------------------------------------------------------------ machinery
    def path(self, name: str) -> Path:
        return self.out / name

    def _stage(self, name: str, key_parts: dict, inputs: Sequence[Path], outputs: Sequence[str],
               fn: Callable[[dict[str, Path]], None]) -> None:
        if name in self.ran or name in self.reused:
            return
        key_src = {"stage": name, "config": key_parts, "inputs": {str(p.name): file_digest(p) for p in inputs}}
        key = hashlib.sha256(json.dumps(key_src, sort_keys=True, default=str).encode()).hexdigest()
        manifest = self.out / "stages" / f"{name}.json"
        targets = {o: self.path(o) for o in outputs}
        if not self.force and manifest.is_file() and all(p.is_file() for p in targets.values()):
            if json.loads(manifest.read_text()).get("key") == key:
                log.info("stage %s: reusing cached outputs (key %s)", name, key[:12])
                self.reused.append(name)
                return
        log.info("stage %s: running", name)
        self.out.mkdir(parents=True, exist_ok=True)
        partial = {o: p.with_name(p.name + ".partial") for o, p in targets.items()}
        try:
            fn(partial)
        except Exception as e:
            raise StageError(name, e) from e
        for o, p in partial.items():
            os.replace(p, targets[o])
        manifest.parent.mkdir(parents=True, exist_ok=True)
        manifest.write_text(json.dumps({"key": key, "outputs": list(outputs)}, indent=2) + "\n")
        self.ran.append(name)

    def _cfg(self, *names: str) -> dict:
        d = self.config.to_dict()
        return {n: d[n] for n in names}

    # ------------------------------------------------------------ data access
    def pairs(self, split: str) -> PairDataset:
        p = self.config.paths.train_pairs if split == "train" else self.config.paths.test_pairs
        return load_pair_dataset(p, has_labels=split == "train")

    def store(self, split: str) -> dict[str, tuple[Context, ...]]:
        return load_context_store(self.path(f"contexts.{split}.tsv"), self.config.cleaning)

    def vocab(self) -> Vocabulary:
        return Vocabulary.load(self.path("vocab.txt"), self.config.tokenizer)

    # ------------------------------------------------------------ stages
    def ingest(self) -> None:
        c = self.config
        c.validate()

        def run(out):
            for split in SPLITS:
                self.pairs(split)  # validates the files
            docs = load_raw_corpus(c.paths.corpus, c.cleaning)
            if not docs:
                raise ValueError("context corpus is empty after cleaning")
            with out["corpus.clean.tsv"].open("w", encoding="utf-8", newline="\n") as fh:
                for d in docs:
                    fh.write(f"{d.source}\t{d.text}\n")

        inputs = [Path(c.paths.train_pairs), Path(c.paths.test_pairs), Path(c.paths.corpus)]
        self._stage("ingest", self._cfg("cleaning"), inputs, ["corpus.clean.tsv"], run)

    def _clean_corpus(self) -> tuple[list[str], list[str]]:
        sources, texts = [], []
        for line in self.path("corpus.clean.tsv").read_text(encoding="utf-8").splitlines():
            s, t = line.split("\t", 1)
            sources.append(s)
            texts.append(t)
        return sources, texts

    def index(self) -> None:
        self.ingest()

        def run(out):
            _, texts = self._clean_corpus()
            build_index(texts, self.config.tokenizer).save(out["index.json"])

        self._stage("index", self._cfg("tokenizer"), [self.path("corpus.clean.tsv")], ["index.json"], run)

    def retrieve(self) -> None:
        self.index()
        c = self.config

        def run(out):
            idx = InvertedIndex.load(self.path("index.json"))
            sources, _ = self._clean_corpus()
            for split in SPLITS:
                records = []
                for pair in self.pairs(split):
                    for side, text in (("a", pair.text_a), ("b", pair.text_b)):
                        for doc, score in retrieve(idx, c.retrieval, text):
                            records.append((sentence_id(pair.id, side), score, sources[doc], idx.documents[doc]))
                write_context_store(out[f"contexts.{split}.tsv"], records)

        inputs = [self.path("index.json"), self.path("corpus.clean.tsv"),
                  Path(c.paths.train_pairs), Path(c.paths.test_pairs)]
        self._stage("retrieve", self._cfg("retrieval"), inputs,
                    [f"contexts.{s}.tsv" for s in SPLITS], run)

    def build_vocab(self) -> None:
        self.retrieve()
        c = self.config

        def run(out):
            texts = [t for p in self.pairs("train") for t in (p.text_a, p.text_b)]
            texts += [ctx.text for group in self.store("train").values() for ctx in group]
            build_vocabulary(texts, c.tokenizer, c.min_token_freq).save(out["vocab.txt"])

        self._stage("vocab", self._cfg("tokenizer", "min_token_freq"),
                    [Path(c.paths.train_pairs), self.path("contexts.train.tsv")], ["vocab.txt"], run)

    def _examples(self, split: str, vocab: Vocabulary, selected: dict | None = None) -> list[MatchExample]:
        max_len = self.config.encoder.max_seq_len
        enc = lambda t: tuple(encode_ids(vocab, vocab.tokens(t), max_len))
        out = []
        for p in self.pairs(split):
            ca = cb = ()
            if selected is not None:
                ca = tuple(enc(t) for t in selected.get((p.id, "a"), ()))
                cb = tuple(enc(t) for t in selected.get((p.id, "b"), ()))
            out.append(MatchExample(p.id, enc(p.text_a), enc(p.text_b), ca, cb, p.label))
        return out

    def _new_matcher(self, vocab: Vocabulary, use_contexts: bool, role: str) -> ContextMatcher:
        c = self.config
        enc = c.effective_encoder if use_contexts else c.encoder
        return ContextMatcher(enc, c.fusion, len(vocab), c.selector.K, derive_seed(c.seed, role),
                              use_contexts=use_contexts, context_seed=derive_seed(c.seed, role + "/context"))

    def train_baseline(self) -> None:
        self.build_vocab()
        c = self.config

        def run(out):
            vocab = self.vocab()
            model = self._new_matcher(vocab, False, "baseline")
            hist = train_matcher(model, self._examples("train", vocab), c.train, derive_seed(c.seed, "baseline/fit"))
            checkpoint.save(out["baseline.ckpt"], model.params.state())
            test = self._examples("test", vocab)
            _write_probs(out["baseline.test.tsv"], test, model.predict_proba(test))
            out["baseline.history.json"].write_text(json.dumps(dataclasses.asdict(hist), indent=2) + "\n")

        self._stage("train-baseline", self._cfg("encoder", "fusion", "train", "selector", "seed"),
                    [self.path("vocab.txt"), Path(c.paths.train_pairs), Path(c.paths.test_pairs)],
                    ["baseline.ckpt", "baseline.test.tsv", "baseline.history.json"], run)

    def _load_baseline(self, vocab: Vocabulary) -> ContextMatcher:
        model = self._new_matcher(vocab, False, "baseline")
        model.params.load_state(checkpoint.load(self.path("baseline.ckpt")))
        return model

    def pseudo_label(self) -> None:
        self.train_baseline()
        c = self.config

        def run(out):
            vocab = self.vocab()
            if c.scorer.kind == "bag":
                scorer = BaselineScorer.random_bag(c.scorer.dim, derive_seed(c.seed, "scorer"), c.tokenizer)
            else:
                scorer = BaselineScorer(self._load_baseline(vocab).encoders.sentence, vocab, "encoder")
            records = make_pseudo_labels(self.pairs("train"), self.store("train"), scorer, c.selector)
            write_pseudo_labels(out["pseudo_labels.tsv"], records)

        inputs = [self.path("vocab.txt"), self.path("contexts.train.tsv"), Path(c.paths.train_pairs)]
        if c.scorer.kind == "baseline":
            inputs.append(self.path("baseline.ckpt"))
        self._stage("pseudo-label", self._cfg("selector", "scorer", "seed"), inputs, ["pseudo_labels.tsv"], run)

    def _selector_model(self, vocab: Vocabulary) -> SelectorModel:
        return SelectorModel(vocab, self.config.encoder, derive_seed(self.config.seed, "selector"))

    def train_selector(self) -> None:
        self.pseudo_label()
        c = self.config

        def run(out):
            vocab = self.vocab()
            records = read_pseudo_labels(self.path("pseudo_labels.tsv"), self.pairs("train"), self.store("train"))
            model, hist = train_selector(records, vocab, c.encoder, c.selector_train,
                                         derive_seed(c.seed, "selector"))
            checkpoint.save(out["selector.ckpt"], model.params.state())
            out["selector.history.json"].write_text(json.dumps(dataclasses.asdict(hist), indent=2) + "\n")

        self._stage("train-selector", self._cfg("encoder", "selector_train", "seed"),
                    [self.path("pseudo_labels.tsv"), self.path("vocab.txt"), self.path("contexts.train.tsv")],
                    ["selector.ckpt", "selector.history.json"], run)

    def select(self) -> None:
        c = self.config
        mode = c.selection_mode
        if mode == "model":
            self.train_selector()
        else:
            self.train_baseline()

        def run(out):
            model = None
            if mode == "model":
                model = self._selector_model(self.vocab())
                model.params.load_state(checkpoint.load(self.path("selector.ckpt")))
            for split in SPLITS:
                store = self.store(split)
                items = [(p, store.get(sentence_id(p.id, "a"), ()), store.get(sentence_id(p.id, "b"), ()))
                         for p in self.pairs(split)]
                results = select_many(model, items, c.selector, mode, derive_seed(c.seed, f"select/{split}"))
                with out[f"selected.{split}.tsv"].open("w", encoding="utf-8", newline="\n") as fh, \
                        out[f"verdicts.{split}.tsv"].open("w", encoding="utf-8", newline="\n") as vh:
                    for (p, _, _), (ca, cb, verdicts) in zip(items, results):
                        for side, chosen in (("a", ca), ("b", cb)):
                            for rank, ctx in enumerate(chosen):
                                fh.write(f"{p.id}\t{side}\t{rank}\t{ctx.retrieval_score!r}\t{ctx.text}\n")
                        for v in verdicts:
                            vh.write(f"{v.pair_id}\t{v.side}\t{v.keep_probability!r}\t{int(v.kept)}\t"
                                     f"{context_hash(v.context.text)}\n")

        inputs = [self.path("contexts.train.tsv"), self.path("contexts.test.tsv")]
        if mode == "model":
            inputs.append(self.path("selector.ckpt"))
        self._stage("select", {"mode": mode, **self._cfg("selector", "seed")}, inputs,
                    [f"selected.{s}.tsv" for s in SPLITS] + [f"verdicts.{s}.tsv" for s in SPLITS], run)

    def selected_contexts(self, split: str) -> dict[tuple[int, str], list[str]]:
        out: dict[tuple[int, str], list[str]] = {}
        for line in self.path(f"selected.{split}.tsv").read_text(encoding="utf-8").splitlines():
            pid, side, _, _, text = line.split("\t", 4)
            out.setdefault((int(pid), side), []).append(text)
        return out

    def train_matcher(self) -> None:
        self.select()
        c = self.config

        def run(out):
            vocab = self.vocab()
            model = self._new_matcher(vocab, True, "matcher")
            train = self._examples("train", vocab, self.selected_contexts("train"))
            hist = train_matcher(model, train, c.train, derive_seed(c.seed, "matcher/fit"))
            checkpoint.save(out["matcher.ckpt"], model.params.state())
            test = self._examples("test", vocab, self.selected_contexts("test"))
            _write_probs(out["matcher.test.tsv"], test, model.predict_proba(test))
            out["matcher.history.json"].write_text(json.dumps(dataclasses.asdict(hist), indent=2) + "\n")

        self._stage("train-matcher", {"share": c.effective_encoder.share_context_params,
                                      **self._cfg("encoder", "fusion", "train", "selector", "seed")},
                    [self.path("vocab.txt"), self.path("selected.train.tsv"), self.path("selected.test.tsv"),
                     Path(c.paths.train_pairs), Path(c.paths.test_pairs)],
                    ["matcher.ckpt", "matcher.test.tsv", "matcher.history.json"], run)

    def evaluate(self) -> dict[str, EvalReport]:
        self.train_baseline()
        self.train_matcher()
        c = self.config

        def run(out):
            preds = decide(_read_probs(self.path("baseline.test.tsv")), _read_probs(self.path("matcher.test.tsv")),
                           c.use_result_selector, c.confidence_gate)
            decision.write_prediction_log(out["predictions.tsv"], preds)
            test = self.pairs("test")
            if any(p.label is None for p in test):
                raise ValueError("test pairs need gold labels for evaluation")
            gold = {p.id: p.label for p in test}
            reports = evaluation_reports(preds, gold)
            decision.write_report(out["report.tsv"], reports, dataset_tag(c.paths.test_pairs))
            out["summary.txt"].write_text(f"ablation: {c.ablation}\n" + decision.summary_block(reports) + "\n")

        self._stage("evaluate", {"rs": c.use_result_selector, "gate": c.confidence_gate},
                    [self.path("baseline.test.tsv"), self.path("matcher.test.tsv"), Path(c.paths.test_pairs)],
                    ["predictions.tsv", "report.tsv", "summary.txt"], run)
        return decision.read_report(self.path("report.tsv"))[1]

    STAGES = {
        "ingest": "ingest", "index": "index", "retrieve": "retrieve", "pseudo-label": "pseudo_label",
        "train-baseline": "train_baseline", "train-selector": "train_selector",
        "train-matcher": "train_matcher", "evaluate": "evaluate", "pipeline": "evaluate",
    }

    def run_until(self, stage: str):
        return getattr(self, self.STAGES[stage])()

    def adopt(self, other_dir) -> int:
        """Copy stage outputs and manifests from another run directory.

        Nothing is trusted blindly: a copied stage is reused only if its
        recorded key matches the key this run computes, which covers both the
        configuration slice and the input file digests.
        """
        src = Path(other_dir)
        n = 0
        for manifest in sorted((src / "stages").glob("*.json")):
            outputs = json.loads(manifest.read_text()).get("outputs", [])
            if not all((src / o).is_file() for o in outputs):
                continue
            (self.out / "stages").mkdir(parents=True, exist_ok=True)
            if (self.out / "stages" / manifest.name).exists():
                continue
            for o in outputs:
                shutil.copy2(src / o, self.out / o)
            shutil.copy2(manifest, self.out / "stages" / manifest.name)
            n += 1
        return n


def decide(y_hat: dict[int, float], y_bar: dict[int, float], use_result_selector: bool = True,
           confidence_gate: float | None = None) -> list[MatchPrediction]:
    if set(y_hat) != set(y_bar):
        raise ValueError(f"baseline and matcher predictions cover different pairs: "
                         f"{sorted(set(y_hat) ^ set(y_bar))}")
    return [result_select(y_hat[i], y_bar[i], i, use_result_selector, confidence_gate) for i in sorted(y_hat)]


def evaluation_reports(preds: Sequence[MatchPrediction], gold: dict[int, int]) -> dict[str, EvalReport]:
    """Final decision plus the two component models thresholded at 0.5."""
    final = decision.evaluate(preds, gold)
    ordered = sorted(preds, key=lambda p: p.pair_id)
    g = [gold[p.pair_id] for p in ordered]
    return {
        "final": final,
        "baseline": confusion([int(p.y_hat >= 0.5) for p in ordered], g),
        "context": confusion([int(p.y_bar >= 0.5) for p in ordered], g),
    }


def dataset_tag(path) -> str:
    return f"{Path(path).name}:{file_digest(path)[:16]}"


def _write_probs(path: Path, examples: Sequence[MatchExample], probs: np.ndarray) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for ex, p in zip(examples, probs):
            fh.write(f"{ex.pair_id}\t{float(p)!r}\n")


def _read_probs(path: Path) -> dict[int, float]:
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        pid, p = line.split("\t")
        out[int(pid)] = float(p)
    return out


def run_pipeline(config: RunConfig, force: bool = False) -> dict[str, EvalReport]:
    return Pipeline(config, force).evaluate()


# ---------------------------------------------------------------- ablations

@dataclass(frozen=True)
class AblationRun:
    mode: str
    dataset: str
    final: EvalReport
    context: EvalReport | None = None


def load_run(output_dir, mode: str) -> AblationRun:
    dataset, reports = decision.read_report(Path(output_dir) / "report.tsv")
    return AblationRun(mode, dataset, reports["final"], reports.get("context"))


def report_ablation(runs: Sequence[AblationRun]) -> str:
    """ACC/F1 (in points) per run with deltas against the ``none`` row."""
    if len(runs) < 2:
        raise ValueError("need at least two runs to compare")
    datasets = {r.dataset for r in runs}
    if len(datasets) != 1:
        raise ValueError(f"runs were evaluated on different datasets: {sorted(datasets)}")
    ref = next((r for r in runs if r.mode == "none"), None)
    if ref is None:
        raise ValueError("ablation table needs a 'none' run as reference")

    def pts(x: float) -> float:
        return round(100 * x, 2)

    header = f"{'mode':<10} {'ACC':>7} {'dACC':>7} {'F1':>7} {'dF1':>7} {'ctxACC':>7} {'dctxACC':>8}"
    lines = [header]
    for r in runs:
        acc, f1 = pts(r.final.accuracy), pts(r.final.f1)
        d_acc, d_f1 = acc - pts(ref.final.accuracy), f1 - pts(ref.final.f1)
        if r.context is not None and ref.context is not None:
            cacc = pts(r.context.accuracy)
            ctx = f"{cacc:7.2f} {cacc - pts(ref.context.accuracy):+8.2f}"
        else:
            ctx = f"{'-':>7} {'-':>8}"
        lines.append(f"{r.mode:<10} {acc:7.2f} {d_acc:+7.2f} {f1:7.2f} {d_f1:+7.2f} {ctx}")
    return "\n".join(lines)


def run_ablation(config: RunConfig, modes: Sequence[str] = ABLATIONS, force: bool = False) -> tuple[list[AblationRun], str]:
    base = Path(config.paths.output_dir)
    runs = []
    for n, mode in enumerate(modes):
        cfg = dataclasses.replace(config, ablation=mode,
                                  paths=dataclasses.replace(config.paths, output_dir=str(base / mode)))
        log.info("ablation %s", mode)
        pipe = Pipeline(cfg, force)
        if n and not force:
            pipe.adopt(base / modes[0])
        pipe.evaluate()
        runs.append(load_run(base / mode, mode))
    table = report_ablation(runs)
    base.mkdir(parents=True, exist_ok=True)
    (base / "ablation.txt").write_text(table + "\n", encoding="utf-8")
    return runs, table
