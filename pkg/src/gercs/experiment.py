"""Experiment configuration and the end-to-end GER pipeline."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import h2tmodel as hm
from .metrics import EvalReport, evaluate
from .nbest import EnsembleSpec, NBestList, build_ensembles, one_best
from .prompt import H2TPair, PromptTemplate, format_prompt, make_pair
from .simcorpus import (DEFAULT_BEAMS, DEFAULT_ENSEMBLE, DEFAULT_PROFILE, NoisePersona, SplitSpec, Utterance,
                        generate_corpus, hypotheses_for, load_grammar, make_persona, pretraining_corpus, split)
from .textnorm import detokenize, from_surfaces


@dataclass
class Paths:
    corpus_dir: str = "runs/corpus"
    checkpoints: str = "runs/checkpoints"
    reports: str = "runs/reports"


@dataclass
class CorpusConfig:
    size: int = 2300
    hyp_seed_offset: int = 1
    pretrain_sentences: int = 20000
    pretrain_seed_offset: int = 1000


@dataclass
class ExperimentConfig:
    seed: int = 7
    paths: Paths = field(default_factory=Paths)
    ensemble: str = DEFAULT_ENSEMBLE
    prompt: PromptTemplate = field(default_factory=PromptTemplate)
    model: hm.ModelConfig = field(default_factory=hm.ModelConfig)
    lora: hm.LoraConfig = field(default_factory=lambda: hm.LoraConfig(learning_rate=1e-2))
    pretrain: hm.PretrainConfig = field(default_factory=lambda: hm.PretrainConfig(steps=1500))
    split: SplitSpec = field(default_factory=lambda: SplitSpec(2000, 300, 7))
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    personas: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_PROFILE))
    beams: dict = field(default_factory=lambda: dict(DEFAULT_BEAMS))

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def ensemble_spec(self) -> EnsembleSpec:
        return EnsembleSpec.parse(self.ensemble)

    def make_personas(self) -> list[NoisePersona]:
        return [make_persona(name, **rates) for name, rates in self.personas.items()]


def _coerce(current, value):
    if isinstance(current, bool):
        if isinstance(value, str):
            return value.lower() in ("1", "true", "yes", "on")
        return bool(value)
    if isinstance(current, int) and not isinstance(current, bool):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, tuple):
        return tuple(value.split(",")) if isinstance(value, str) else tuple(value)
    if current is None and isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def _merge_dict(current: dict, value: dict) -> dict:
    merged = copy.deepcopy(current)
    for k, v in value.items():
        old = merged.get(k)
        if isinstance(old, dict) and isinstance(v, dict):
            merged[k] = _merge_dict(old, v)
        elif old is not None:
            merged[k] = _coerce(old, v)
        else:
            merged[k] = _coerce(None, v) if isinstance(v, str) else v
    return merged


def _apply(obj, data: dict, where: str = ""):
    """Return a copy of dataclass ``obj`` with ``data`` merged in (recursively)."""
    names = {f.name for f in fields(obj)}
    updates = {}
    for key, value in data.items():
        if key not in names:
            raise KeyError(f"unknown config key {where}{key}")
        current = getattr(obj, key)
        if is_dataclass(current) and isinstance(value, dict):
            updates[key] = _apply(current, value, f"{where}{key}.")
        elif isinstance(current, dict) and isinstance(value, dict):
            updates[key] = _merge_dict(current, value)
        else:
            updates[key] = _coerce(current, value)
    # rebuild so __post_init__ validation runs on the merged values
    kwargs = {f.name: updates.get(f.name, getattr(obj, f.name)) for f in fields(obj) if f.init}
    return type(obj)(**kwargs)


def load_config(path=None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Defaults, then the TOML file, then ``section.key=value`` overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        with open(path, "rb") as f:
            cfg = _apply(cfg, tomllib.load(f))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not key=value")
        nested: dict = {}
        node = nested
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value.strip()
        cfg = _apply(cfg, nested)
    return cfg


# ---------------------------------------------------------------- pipeline


@dataclass
class Split:
    utts: list[Utterance]
    table: dict
    lists: dict[str, NBestList]

    @property
    def refs(self) -> dict[str, str]:
        return {u.utt_id: u.text for u in self.utts}


@dataclass
class ExperimentData:
    train: Split
    test: Split


def prepare_data(cfg: ExperimentConfig, ensemble: str | None = None) -> ExperimentData:
    corpus = generate_corpus(cfg.corpus.size, cfg.seed)
    train_utts, test_utts = split(corpus, cfg.split)
    personas = cfg.make_personas()
    spec = EnsembleSpec.parse(ensemble or cfg.ensemble)
    hyp_seed = cfg.seed + cfg.corpus.hyp_seed_offset

    def build(utts):
        table: dict = {}
        for h in hypotheses_for(utts, personas, cfg.beams, hyp_seed):
            table.setdefault(h.utt_id, {}).setdefault(h.system, []).append(h)
        return Split(utts, table, build_ensembles(table, spec))

    return ExperimentData(build(train_utts), build(test_utts))


def pretrain(cfg: ExperimentConfig, log_every: int = 0) -> hm.H2TModel:
    grammar = load_grammar()
    vocab = hm.build_vocabulary(grammar.token_inventory())
    texts = pretraining_corpus(cfg.corpus.pretrain_sentences, cfg.seed + cfg.corpus.pretrain_seed_offset, grammar)
    return hm.pretrain_base(texts, cfg.model, cfg.seed, vocab=vocab, train=cfg.pretrain, log_every=log_every)


def load_or_pretrain(cfg: ExperimentConfig, path=None, log_every: int = 0) -> hm.H2TModel:
    """Reuse a cached base checkpoint when its config hash matches, else pretrain (and cache)."""
    if path is not None and Path(path).exists():
        header = hm.read_checkpoint_header(path)
        if header["extra"].get("base_hash") == base_hash(cfg):
            return hm.load_checkpoint(path)
    model = pretrain(cfg, log_every)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        hm.save_checkpoint(model, path, extra={"base_hash": base_hash(cfg), "seed": cfg.seed})
    return model


def base_hash(cfg: ExperimentConfig) -> str:
    """Hash of the settings that determine the base model."""
    blob = json.dumps({"seed": cfg.seed, "model": asdict(cfg.model), "pretrain": asdict(cfg.pretrain),
                       "corpus": asdict(cfg.corpus)}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def make_pairs(split_: Split, template: PromptTemplate, max_context: int | None = None,
               limit: int | None = None) -> list[H2TPair]:
    utts = split_.utts if limit is None else split_.utts[:limit]
    return [make_pair(split_.lists[u.utt_id], u.ref, template, max_context) for u in utts]


def adapt(base: hm.H2TModel, pairs: Sequence[H2TPair], cfg: ExperimentConfig, log: bool = False):
    model = hm.inject_lora(base, cfg.lora, seed=cfg.seed)
    return hm.train_lora(model, pairs, cfg.lora, seed=cfg.seed, log=log)


def predict(model: hm.H2TModel, lists: dict[str, NBestList], template: PromptTemplate,
            max_len: int = 64) -> dict[str, str]:
    out = {}
    for utt_id, lst in lists.items():
        toks = hm.decode_greedy(model, format_prompt(lst, template).tokens, max_len)
        out[utt_id] = detokenize(from_surfaces(toks))
    return out


def score_ger(split_: Split, predictions: dict[str, str], baseline_system: str) -> EvalReport:
    """MER of GER output and of the baseline 1-best, with oracles of the lists."""
    outputs = {"ger": predictions, baseline_system: one_best(split_.table, baseline_system)}
    return evaluate(split_.refs, outputs, split_.lists, primary="ger")


def relative_reduction(baseline: float, new: float) -> float:
    """Signed relative change in percent, e.g. 11.0 -> 8.6 gives -21.8."""
    if baseline == 0:
        return 0.0
    return round(100.0 * (new - baseline) / baseline, 1)
