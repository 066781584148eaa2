"""Run configuration and the multi-stage experiment pipeline.

A run directory holds everything one configuration produces::

    config.effective.yaml   the validated config with defaults filled in
    corpus/                 generated manifests, feature files, SHA256SUMS
    checkpoints/            one file per trained component
    state/                  resumable training state
    records/                per-epoch training records (jsonl + csv)
    metrics/                one json file per evaluation cell
    report.csv, report.txt  the results table
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import evaluation as E
from . import numerics as nx
from .alignment import (
    AlignmentError,
    BlockConfig,
    compute_delays,
    realized_main_char_blocks,
    write_alignments,
)
from .corpus import (
    Corpus,
    CorpusConfig,
    CorpusError,
    FrameSpec,
    Vocabulary,
    block_duration,
    checksum_tree,
    generate,
    load_corpus,
    write_corpus,
)
from .recognizer import Recognizer, RecognizerConfig
from .synthesizer import Synthesizer, SynthesizerConfig
from .trainer import (
    GREEDY,
    INCREMENTAL,
    NONINCREMENTAL,
    TEACHER_FORCING,
    ConfigError,
    TrainConfig,
    make_examples,
    train_asr,
    train_isr,
    train_itts,
    train_stage2,
    train_tts,
    write_records,
)

log = logging.getLogger(__name__)

REGIMES = ("indep", "chain_greedy", "chain_teacher_forcing")
INPUTS = ("natural", "synthetic")
MODES = (NONINCREMENTAL, INCREMENTAL)
STAGE1_COMPONENTS = ("asr", "tts", "isr", "itts")

# keys that are filled in from elsewhere and may not be set directly
_DERIVED = {
    "corpus": {"seed"},
    "recognizer": {"feature_dim", "vocab_size"},
    "synthesizer": {"feature_dim", "vocab_size"},
    "stage1": {"seed", "intermediate"},
    "stage2": {"seed"},
}


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/toy"
    eval_split: str = "dev"
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    frame_spec: FrameSpec = field(default_factory=FrameSpec)
    block: BlockConfig = field(default_factory=lambda: BlockConfig(8, 1, 1, 1, 2, 1.0))
    recognizer: RecognizerConfig = field(default_factory=RecognizerConfig)
    synthesizer: SynthesizerConfig = field(default_factory=SynthesizerConfig)
    stage1: TrainConfig = field(default_factory=TrainConfig)
    stage2: TrainConfig = field(default_factory=TrainConfig)
    # optional explicit locations of stage-1 checkpoints; default is <output_dir>/checkpoints
    checkpoints: dict = field(default_factory=dict)

    def to_dict(self):
        out = {"seed": self.seed, "output_dir": self.output_dir, "eval_split": self.eval_split,
               "checkpoints": dict(sorted(self.checkpoints.items()))}
        out["frame_spec"] = {"frame_length_ms": self.frame_spec.frame_length_ms,
                             "frame_shift_ms": self.frame_spec.frame_shift_ms}
        for name in ("corpus", "block", "recognizer", "synthesizer", "stage1", "stage2"):
            d = dataclasses.asdict(getattr(self, name))
            out[name] = {k: v for k, v in d.items() if k not in _DERIVED.get(name, ())}
        return out

    def stage_config(self, stage, intermediate=None):
        cfg = self.stage1 if stage == 1 else self.stage2
        if intermediate is not None:
            cfg = dataclasses.replace(cfg, intermediate=intermediate)
        return cfg


def _build(cls, data, section, exclude=()):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key in exclude:
            raise ConfigError(f"{section}.{key}: derived automatically, remove it from the config")
        if key not in known:
            raise ConfigError(f"{section}.{key}: unknown key")
        default = getattr(cls(), key) if section != "frame_spec" else getattr(FrameSpec(), key)
        kwargs[key] = _coerce(value, default, f"{section}.{key}")
    return kwargs


def _coerce(value, default, path):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if default is None:
        return value
    raise ConfigError(f"{path}: unsupported value {value!r}")


def parse_run_config(data) -> RunConfig:
    """Validate a config mapping; every error names the offending field path."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    top = {"seed", "output_dir", "eval_split", "corpus", "frame_spec", "block", "recognizer", "synthesizer",
           "stage1", "stage2", "checkpoints"}
    for key in data:
        if key not in top:
            raise ConfigError(f"{key}: unknown key")
    seed = _coerce(data.get("seed", 0), 0, "seed")
    output_dir = _coerce(data.get("output_dir", "runs/toy"), "", "output_dir")
    eval_split = _coerce(data.get("eval_split", "dev"), "", "eval_split")
    if eval_split not in ("dev", "test"):
        raise ConfigError(f"eval_split: must be 'dev' or 'test', got {eval_split!r}")

    corpus_kw = _build(CorpusConfig, data.get("corpus"), "corpus", _DERIVED["corpus"])
    corpus = CorpusConfig(**corpus_kw, seed=seed)
    try:
        Vocabulary(corpus.vocabulary)
    except CorpusError as exc:
        raise ConfigError(f"corpus.vocabulary: {exc}") from None
    try:
        corpus.validate()
    except CorpusError as exc:
        raise ConfigError(f"corpus: {exc}") from None
    spec_kw = _build(FrameSpec, data.get("frame_spec"), "frame_spec", {"feature_dim"})
    try:
        spec = FrameSpec(**spec_kw, feature_dim=corpus.feature_dim)
    except CorpusError as exc:
        raise ConfigError(f"frame_spec: {exc}") from None
    try:
        block = BlockConfig(**{**dataclasses.asdict(RunConfig().block), **_build(BlockConfig, data.get("block"), "block")})
    except AlignmentError as exc:
        raise ConfigError(f"block: {exc}") from None
    vocab_size = len(corpus.vocabulary) + 3
    rec = RecognizerConfig(**_build(RecognizerConfig, data.get("recognizer"), "recognizer", _DERIVED["recognizer"]),
                           feature_dim=corpus.feature_dim, vocab_size=vocab_size)
    if rec.subsampling != block.frames_per_block:
        raise ConfigError(f"recognizer.layers: 2**{rec.layers} must equal block.frames_per_block={block.frames_per_block}")
    syn = SynthesizerConfig(**_build(SynthesizerConfig, data.get("synthesizer"), "synthesizer", _DERIVED["synthesizer"]),
                            feature_dim=corpus.feature_dim, vocab_size=vocab_size)
    if syn.frames_per_step < 1:
        raise ConfigError("synthesizer.frames_per_step: must be >= 1")
    stages = []
    for name in ("stage1", "stage2"):
        cfg = TrainConfig(**_build(TrainConfig, data.get(name), name, _DERIVED[name]), seed=seed)
        try:
            cfg.validate()
        except ConfigError as exc:
            raise ConfigError(f"{name}: {exc}") from None
        stages.append(cfg)
    ckpts = data.get("checkpoints") or {}
    if not isinstance(ckpts, dict):
        raise ConfigError("checkpoints: expected a mapping of component name to path")
    for key, value in ckpts.items():
        if key not in STAGE1_COMPONENTS:
            raise ConfigError(f"checkpoints.{key}: unknown component; expected one of {STAGE1_COMPONENTS}")
        if not isinstance(value, str):
            raise ConfigError(f"checkpoints.{key}: expected a path string")
    return RunConfig(seed, output_dir, eval_split, corpus, spec, block, rec, syn, stages[0], stages[1], dict(ckpts))


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}") from None
    return parse_run_config(data or {})


def dump_run_config(cfg: RunConfig, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True), encoding="utf-8")


# ------------------------------------------------------------------ runs

def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    def __init__(self, cfg: RunConfig, root=None):
        self.cfg = cfg
        self.root = Path(root if root is not None else cfg.output_dir)
        self._corpus = None
        self._teacher_cache = {}

    # paths
    @property
    def corpus_dir(self):
        return self.root / "corpus"

    def ckpt(self, name):
        if name in self.cfg.checkpoints:
            return Path(self.cfg.checkpoints[name])
        return self.root / "checkpoints" / f"{name}.ckpt"

    def state(self, name):
        return self.root / "state" / f"{name}.state"

    def _dirs(self):
        for sub in ("checkpoints", "state", "records", "metrics"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        dump_run_config(self.cfg, self.root / "config.effective.yaml")

    # corpus
    def generate(self, force=False):
        d = self.corpus_dir
        if d.exists() and any(d.iterdir()):
            if not force:
                raise ConfigError(f"{d} is not empty; pass --force to overwrite")
            shutil.rmtree(d)
        self._dirs()
        corpus = generate(self.cfg.corpus)
        write_corpus(d, corpus)
        sums = checksum_tree(d)
        (d / "SHA256SUMS").write_text("".join(f"{h}  {p}\n" for p, h in sums.items()))
        self._corpus = corpus
        return corpus

    def corpus(self) -> Corpus:
        if self._corpus is None:
            if not (self.corpus_dir / "corpus.json").exists():
                raise ConfigError(f"no corpus in {self.corpus_dir}; run the generate command first")
            self._corpus = load_corpus(self.corpus_dir)
        return self._corpus

    # checkpoints
    def save_component(self, name, kind, params, stage):
        cfg = self.cfg.recognizer if kind == "recognizer" else self.cfg.synthesizer
        meta = {"component": name, "kind": kind, "stage": stage, "config": cfg.to_dict(),
                "vocabulary": self.cfg.corpus.vocabulary}
        nx.save_checkpoint(self.ckpt(name), params, self.cfg.seed, stage, meta)

    def load_component(self, name):
        path = self.ckpt(name)
        if not path.exists():
            raise ConfigError(f"checkpoint {path} is missing; train the stage that produces it first")
        params, _, _, meta = nx.load_checkpoint(path)
        if meta.get("vocabulary") != self.cfg.corpus.vocabulary:
            raise ConfigError(f"{path}: vocabulary {meta.get('vocabulary')!r} does not match corpus "
                              f"{self.cfg.corpus.vocabulary!r}")
        if meta["kind"] == "recognizer":
            return Recognizer(RecognizerConfig(**meta["config"]), params)
        return Synthesizer(SynthesizerConfig(**meta["config"]), params)

    def _init(self, kind, salt):
        rng = np.random.default_rng([self.cfg.seed, salt])
        if kind == "recognizer":
            return Recognizer.initialize(self.cfg.recognizer, rng)
        return Synthesizer.initialize(self.cfg.synthesizer, rng)

    def teacher(self):
        return self.load_component("asr")

    def examples(self, split, with_alignment=False):
        key = (split, with_alignment)
        if key not in self._teacher_cache:
            corpus = self.corpus()
            utts = corpus[split]
            if with_alignment:
                self._teacher_cache[key] = make_examples(utts, corpus.vocab, self.teacher(), self.cfg.block)
            else:
                self._teacher_cache[key] = make_examples(utts, corpus.vocab)
        return self._teacher_cache[key]

    # training
    def train_stage1(self, mode, stop_after=None):
        """Returns True when every component of the stage finished."""
        self._dirs()
        cfg = self.cfg.stage_config(1)
        corpus = self.corpus()
        vocab, block = corpus.vocab, self.cfg.block
        done = True
        records = []
        if mode == NONINCREMENTAL:
            train, dev = self.examples(corpus.labeled_split), self.examples(self.cfg.eval_split)
            asr = self._init("recognizer", 10)
            p, recs, fin = train_asr(asr, train, dev, cfg, "asr", self.state("asr"), stop_after,
                                     lambda ps: {"dev_cer": E.asr_cer(asr.with_params(ps), dev, vocab)})
            records += recs
            done &= fin
            if fin:
                self.save_component("asr", "recognizer", p, 1)
            tts = self._init("synthesizer", 11)
            p, recs, fin = train_tts(tts, train, dev, cfg, "tts", self.state("tts"), stop_after,
                                     lambda ps: {"dev_feature_loss": E.tts_l2(tts.with_params(ps), dev)})
            records += recs
            done &= fin
            if fin:
                self.save_component("tts", "synthesizer", p, 1)
        elif mode == INCREMENTAL:
            if not self.ckpt("asr").exists():
                raise ConfigError(f"incremental stage 1 needs the teacher recognizer {self.ckpt('asr')}; "
                                  "run stage 1 in nonincremental mode first")
            train = self.examples(corpus.labeled_split, True)
            dev = self.examples(self.cfg.eval_split, True)
            realized = realized_main_char_blocks([ex.segments for ex in train], block)
            isr = self._init("recognizer", 12)
            p, recs, fin = train_isr(isr, train, dev, block, cfg, "isr", self.state("isr"), stop_after,
                                     lambda ps: {"dev_cer": E.isr_cer(isr.with_params(ps), dev, vocab, block)})
            records += recs
            done &= fin
            if fin:
                self.save_component("isr", "recognizer", p, 1)
            itts = self._init("synthesizer", 13)
            p, recs, fin = train_itts(itts, train, dev, block, cfg, "itts", self.state("itts"), stop_after,
                                      lambda ps: {"dev_feature_loss": E.itts_l2(itts.with_params(ps), dev, block),
                                                  "itts_avg_main_blocks": realized})
            records += recs
            done &= fin
            if fin:
                self.save_component("itts", "synthesizer", p, 1)
        else:
            raise ConfigError(f"mode must be {NONINCREMENTAL!r} or {INCREMENTAL!r}, got {mode!r}")
        write_records(self.root / "records" / f"stage1_{mode}.jsonl", self.root / "records" / f"stage1_{mode}.csv",
                      records)
        return done

    def train_stage2(self, mode, intermediate, stop_after=None, on_update=None):
        self._dirs()
        cfg = self.cfg.stage_config(2, intermediate)
        if intermediate not in (TEACHER_FORCING, GREEDY):
            raise ConfigError(f"intermediate must be {TEACHER_FORCING!r} or {GREEDY!r}, got {intermediate!r}")
        corpus = self.corpus()
        vocab, block = corpus.vocab, self.cfg.block
        incremental = mode == INCREMENTAL
        if mode not in MODES:
            raise ConfigError(f"mode must be {NONINCREMENTAL!r} or {INCREMENTAL!r}, got {mode!r}")
        rec_name, syn_name = ("isr", "itts") if incremental else ("asr", "tts")
        needed = [rec_name, syn_name] + (["asr"] if incremental else [])
        for name in needed:
            if not self.ckpt(name).exists():
                raise ConfigError(f"stage 2 needs the stage-1 checkpoint {self.ckpt(name)}")
        rec, syn = self.load_component(rec_name), self.load_component(syn_name)
        aligned = incremental
        chain = self.examples(corpus.chain_split, aligned)
        dev = self.examples(self.cfg.eval_split, aligned)
        labeled = self.examples(corpus.labeled_split, aligned) if cfg.supervised_interleave else None

        def metrics(ip, sp):
            r, s = rec.with_params(ip), syn.with_params(sp)
            if incremental:
                return {"isr": {"dev_cer": E.isr_cer(r, dev, vocab, block)},
                        "itts": {"dev_feature_loss": E.itts_l2(s, dev, block)}}
            return {"isr": {"dev_cer": E.asr_cer(r, dev, vocab)}, "itts": {"dev_feature_loss": E.tts_l2(s, dev)}}

        tag = f"{mode}_{intermediate}"
        res = train_stage2(rec, syn, chain, dev, block, cfg, incremental, labeled, self.state(f"stage2_{tag}"),
                           stop_after, metrics, on_update)
        for r in res.records:
            r.component = {"isr": rec_name, "itts": syn_name}[r.component]
        write_records(self.root / "records" / f"stage2_{tag}.jsonl", self.root / "records" / f"stage2_{tag}.csv",
                      res.records)
        if res.finished:
            self.save_component(f"{rec_name}_chain_{intermediate}", "recognizer", res.recognizer, 2)
            self.save_component(f"{syn_name}_chain_{intermediate}", "synthesizer", res.synthesizer, 2)
        return res.finished

    # evaluation
    def components(self, regime, mode):
        rec_name, syn_name = ("isr", "itts") if mode == INCREMENTAL else ("asr", "tts")
        if regime == "indep":
            return rec_name, syn_name
        if regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {regime!r}")
        inter = regime[len("chain_"):]
        return f"{rec_name}_chain_{inter}", f"{syn_name}_chain_{inter}"

    def evaluate(self, regime, mode, input_kind, split=None):
        if input_kind not in INPUTS:
            raise ConfigError(f"input must be one of {INPUTS}, got {input_kind!r}")
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        self._dirs()
        split = split or self.cfg.eval_split
        rec_name, syn_name = self.components(regime, mode)
        rec, syn = self.load_component(rec_name), self.load_component(syn_name)
        vocab, block, spec = self.corpus().vocab, self.cfg.block, self.cfg.frame_spec
        incremental = mode == INCREMENTAL
        examples = self.examples(split, incremental)
        natural = input_kind == "natural"
        if incremental:
            cer = E.isr_cer(rec, examples, vocab, block, None if natural else syn)
            l2 = E.itts_l2(syn, examples, block, None if natural else rec)
            realized = realized_main_char_blocks([ex.segments for ex in examples], block)
            delay_s, delay_c = compute_delays(block, spec, realized)
        else:
            cer = E.asr_cer(rec, examples, vocab, None if natural else syn)
            l2 = E.tts_l2(syn, examples, None if natural else rec)
            realized = None
            delay_s = float(np.mean([block_duration(spec, ex.utt.num_frames) for ex in examples]))
            delay_c = float(np.mean([len(ex.tokens) for ex in examples]))
        out = {
            "run_id": f"{regime}:{mode}:{input_kind}:{split}",
            "regime": regime, "mode": mode, "input": input_kind, "split": split,
            "recognizer_cer": cer, "synthesizer_l2": l2,
            "delay_seconds": delay_s, "delay_chars": delay_c, "itts_avg_main_blocks": realized,
            "checkpoints": {rec_name: _sha256(self.ckpt(rec_name)), syn_name: _sha256(self.ckpt(syn_name))},
        }
        path = self.root / "metrics" / f"{regime}__{mode}__{input_kind}.json"
        path.write_text(json.dumps(out, sort_keys=True, indent=1) + "\n")
        return out

    def export_alignments(self, splits=None):
        self._dirs()
        corpus = self.corpus()
        out = []
        for split in splits or (corpus.labeled_split, corpus.chain_split):
            exs = self.examples(split, True)
            path = self.root / "alignments" / f"{split}.jsonl"
            path.parent.mkdir(parents=True, exist_ok=True)
            write_alignments(path, [(ex.utt.id, ex.alignment) for ex in exs])
            out.append(path)
        return out

    def run_all(self, force=False):
        self.generate(force=force)
        self.train_stage1(NONINCREMENTAL)
        self.train_stage1(INCREMENTAL)
        for mode in (INCREMENTAL, NONINCREMENTAL):
            for inter in (TEACHER_FORCING, GREEDY):
                self.train_stage2(mode, inter)
        for regime in REGIMES:
            for mode in MODES:
                for kind in INPUTS:
                    self.evaluate(regime, mode, kind)
        return build_report(self.root, self.cfg)


# ---------------------------------------------------------------- report

REGIME_LABELS = {
    "indep": "indep-trn",
    "chain_greedy": "indep-trn + chain-trn-greedy",
    "chain_teacher_forcing": "indep-trn + chain-trn-teachforce",
}
COLUMNS = [
    ("asr", NONINCREMENTAL, "natural", "nat-sp"), ("asr", NONINCREMENTAL, "synthetic", "syn-sp"),
    ("asr", INCREMENTAL, "natural", "nat-sp"), ("asr", INCREMENTAL, "synthetic", "syn-sp"),
    ("tts", NONINCREMENTAL, "natural", "nat-txt"), ("tts", NONINCREMENTAL, "synthetic", "rec-txt"),
    ("tts", INCREMENTAL, "natural", "nat-txt"), ("tts", INCREMENTAL, "synthetic", "rec-txt"),
]


class ReportError(RuntimeError):
    pass


def build_report(root, cfg: RunConfig | None = None):
    """Write report.csv and report.txt from metric files; returns the text table.

    Missing cells are shown as gaps and listed; with no metrics at all this
    raises ``ReportError`` naming what is missing.
    """
    root = Path(root)
    if cfg is None:
        eff = root / "config.effective.yaml"
        cfg = load_run_config(eff) if eff.exists() else RunConfig()
    metrics = {}
    mdir = root / "metrics"
    for path in sorted(mdir.glob("*.json")) if mdir.exists() else []:
        rec = json.loads(path.read_text())
        metrics[(rec["regime"], rec["mode"], rec["input"])] = rec
    if not metrics:
        expected = [f"metrics/{r}__{m}__{i}.json" for r in REGIMES for m in MODES for i in INPUTS]
        raise ReportError(f"no evaluation records under {mdir}; missing: {', '.join(expected)}")

    rows, gaps = [], []
    for regime in REGIMES:
        row = [REGIME_LABELS[regime]]
        for system, mode, kind, _ in COLUMNS:
            rec = metrics.get((regime, mode, kind))
            if rec is None:
                row.append(None)
                gaps.append(f"{regime}:{mode}:{kind}")
                continue
            row.append(rec["recognizer_cer"] if system == "asr" else rec["synthesizer_l2"])
        rows.append(row)

    def delay_of(mode, key):
        vals = [rec[key] for (r, m, _), rec in metrics.items() if m == mode]
        return vals[0] if vals else None

    paper_s, paper_c = compute_delays(BlockConfig(), FrameSpec(50.0, 12.5, 80))
    run_s, run_c = compute_delays(cfg.block, cfg.frame_spec)
    delays = {
        "asr_nonincremental_seconds": delay_of(NONINCREMENTAL, "delay_seconds"),
        "asr_incremental_seconds": delay_of(INCREMENTAL, "delay_seconds"),
        "tts_nonincremental_chars": delay_of(NONINCREMENTAL, "delay_chars"),
        "tts_incremental_chars": delay_of(INCREMENTAL, "delay_chars"),
        "run_config_isr_seconds": run_s, "run_config_itts_chars": run_c,
        "reference_config_isr_seconds": paper_s, "reference_config_itts_chars": paper_c,
    }

    with open(root / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["system"] + [f"{s}_{m}_{k}" for s, m, k, _ in COLUMNS] + ["run_ids"])
        for regime, row in zip(REGIMES, rows):
            ids = [metrics[(regime, m, k)]["run_id"] if (regime, m, k) in metrics else "" for _, m, k, _ in COLUMNS]
            w.writerow([row[0]] + ["" if v is None else f"{v:.6f}" for v in row[1:]] + [";".join(ids)])
        w.writerow(["delay"] + [
            _fmt(delays["asr_nonincremental_seconds"]), "", _fmt(delays["asr_incremental_seconds"]), "",
            _fmt(delays["tts_nonincremental_chars"]), "", _fmt(delays["tts_incremental_chars"]), "", ""])
        w.writerow(["delay (reference blocks)", "", "", f"{paper_s:.4f}", "", "", "", f"{paper_c:g}", "", ""])

    lines = []
    widths = [34] + [14] * len(COLUMNS)
    top = ["", "ASR CER (%)", "", "", "", "TTS L2", "", "", ""]
    sub = ["", "non-incr", "", "incr", "", "non-incr", "", "incr", ""]
    lines.append("".join(c.ljust(w) for c, w in zip(top, widths)))
    lines.append("".join(c.ljust(w) for c, w in zip(sub, widths)))
    lines.append("".join(c.ljust(w) for c, w in zip(["data"] + [lab for *_, lab in COLUMNS], widths)))
    for row in rows:
        cells = [row[0]] + ["--" if v is None else f"{v:.2f}" for v in row[1:]]
        lines.append("".join(c.ljust(w) for c, w in zip(cells, widths)))
    lines.append("")
    lines.append(f"delay, this run: ASR non-incremental {_fmt(delays['asr_nonincremental_seconds'], 's')}, "
                 f"ISR {_fmt(delays['asr_incremental_seconds'], 's')}; TTS non-incremental "
                 f"{_fmt(delays['tts_nonincremental_chars'], ' chars')}, ITTS {_fmt(delays['tts_incremental_chars'], ' chars')}")
    lines.append(f"delay, reference block settings (8-frame blocks, 4 main + 4 look-ahead, 5-char blocks, "
                 f"2 main char blocks): ISR {paper_s:.4f} s, ITTS {paper_c:g} chars")
    if gaps:
        lines.append("missing cells: " + ", ".join(gaps))
    text = "\n".join(lines) + "\n"
    (root / "report.txt").write_text(text, encoding="utf-8")
    return text


def _fmt(v, unit=""):
    if v is None:
        return "--"
    return f"{v:.4f}{unit}" if isinstance(v, float) and not math.isclose(v, round(v)) else f"{v:g}{unit}"
