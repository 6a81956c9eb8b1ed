"""Synthetic code-switched corpus with persona-based noisy ASR hypotheses.

Sentences come from a small template grammar: Mandarin carrier frames whose
slots are filled from an English lexicon. Each persona emulates one ASR
system's error profile; beams are independent corruption samples sorted by
how many edits were applied.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .errors import SplitTooLarge
from .metrics import oracle_cp
from .nbest import EnsembleSpec, Hypothesis, build_ensemble
from .textnorm import Script, TokenSequence, detokenize, script_of, tokenize

_SLOT = re.compile(r"\[([A-Z])\]")


@dataclass(frozen=True)
class LexEntry:
    word: str
    category: str
    transliteration: str
    confusions: tuple[str, ...]


@dataclass(frozen=True)
class Grammar:
    frames: tuple[str, ...]
    lexicon: tuple[LexEntry, ...]
    homophones: dict

    def by_category(self, cat: str) -> list[LexEntry]:
        return [e for e in self.lexicon if e.category == cat]

    @property
    def transliterations(self) -> dict[str, str]:
        return {e.word: e.transliteration for e in self.lexicon}

    @property
    def latin_confusions(self) -> dict[str, tuple[str, ...]]:
        return {e.word: e.confusions for e in self.lexicon}

    def cjk_pool(self) -> list[str]:
        chars: set[str] = set()
        for f in self.frames:
            chars.update(c for c in f if script_of(c) is Script.CJK)
        return sorted(chars)

    def token_inventory(self) -> list[str]:
        """Every token surface the generator and default personas can emit."""
        toks: set[str] = set(self.cjk_pool())
        for e in self.lexicon:
            toks.add(e.word)
            toks.update(e.confusions)
            toks.update(e.transliteration)
        for k, cands in self.homophones.items():
            toks.add(k)
            toks.update(cands)
        # confusions may contain apostrophes or odd casing; store normalized forms
        out: set[str] = set()
        for t in toks:
            out.update(tokenize(t).surfaces)
        return sorted(out)


def _data_lines(name: str) -> list[str]:
    text = resources.files("gercs").joinpath("data", name).read_text(encoding="utf-8")
    return [line for line in text.splitlines() if line.strip() and not line.startswith("#")]


@lru_cache(maxsize=1)
def load_grammar() -> Grammar:
    frames = tuple(_data_lines("frames.txt"))
    lexicon = []
    for line in _data_lines("lexicon.tsv"):
        word, cat, translit, conf = line.split("\t")
        lexicon.append(LexEntry(word, cat, translit, tuple(c for c in conf.split(",") if c)))
    homophones: dict[str, list[str]] = {}
    for line in _data_lines("homophones.tsv"):
        ch, cands = line.split("\t")
        merged = homophones.setdefault(ch, [])
        for c in cands.split(","):
            if c and c != ch and c not in merged:
                merged.append(c)
    homophones = {k: tuple(v) for k, v in homophones.items() if v}
    return Grammar(frames, tuple(lexicon), homophones)


@dataclass
class Utterance:
    utt_id: str
    ref: TokenSequence
    meta: dict = field(default_factory=dict)

    @property
    def text(self) -> str:
        return detokenize(self.ref)


def _realize(frame: str, rng: random.Random, grammar: Grammar) -> tuple[str, list[str]]:
    fillers: list[str] = []

    def fill(m):
        word = rng.choice(grammar.by_category(m.group(1))).word
        fillers.append(word)
        return word

    text = _SLOT.sub(fill, frame)
    return text, fillers


def generate_corpus(n: int, seed: int, grammar: Grammar | None = None, prefix: str = "utt") -> list[Utterance]:
    if n < 1:
        raise ValueError("n must be >= 1")
    grammar = grammar or load_grammar()
    out = []
    for i in range(n):
        rng = random.Random(f"{seed}:{i}")
        fi = rng.randrange(len(grammar.frames))
        text, fillers = _realize(grammar.frames[fi], rng, grammar)
        out.append(Utterance(f"{prefix}{i:06d}", tokenize(text),
                             {"frame": fi, "slots": fillers, "seed": seed, "index": i}))
    return out


@dataclass
class NoisePersona:
    name: str
    sub_rate_cjk: float = 0.0
    sub_rate_latin: float = 0.0
    del_rate: float = 0.0
    ins_rate: float = 0.0
    homophone_table: dict = field(default_factory=dict)
    transliterate_latin: bool = False
    transliterations: dict = field(default_factory=dict)

    def __post_init__(self):
        for key in ("sub_rate_cjk", "sub_rate_latin", "del_rate", "ins_rate"):
            v = getattr(self, key)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{self.name}: {key}={v} outside [0, 1]")

    def check_coverage(self, words: Iterable[str]) -> None:
        if self.transliterate_latin:
            missing = [w for w in words if w not in self.transliterations]
            if missing:
                raise ValueError(f"{self.name}: no transliteration for {missing[:5]}")


def make_persona(name: str, grammar: Grammar | None = None, **rates) -> NoisePersona:
    """Persona wired to the bundled homophone and confusion tables."""
    grammar = grammar or load_grammar()
    table = dict(grammar.homophones)
    table.update(grammar.latin_confusions)
    p = NoisePersona(name, homophone_table=table, transliterations=grammar.transliterations, **rates)
    p.check_coverage(e.word for e in grammar.lexicon)
    return p


# beam sizes follow the ensemble proportions of the strongest setup
DEFAULT_PROFILE = {
    "whisper_like": dict(sub_rate_cjk=0.10, sub_rate_latin=0.25, del_rate=0.03, ins_rate=0.03),
    "conformer_like": dict(sub_rate_cjk=0.15, sub_rate_latin=0.35, del_rate=0.04, ins_rate=0.04),
    "mono_like": dict(sub_rate_cjk=0.06, del_rate=0.02, ins_rate=0.02, transliterate_latin=True),
}
DEFAULT_BEAMS = {"whisper_like": 5, "conformer_like": 5, "mono_like": 5}
DEFAULT_ENSEMBLE = "whisper_like:5,conformer_like:1,mono_like:1"


def default_personas(grammar: Grammar | None = None) -> list[NoisePersona]:
    return [make_persona(name, grammar, **rates) for name, rates in DEFAULT_PROFILE.items()]


def _one_sample(tokens: list[tuple[str, Script]], persona: NoisePersona, rng: random.Random,
                pools: dict[Script, list[str]]) -> tuple[list[str], int]:
    out: list[str] = []
    edits = 0
    for surface, script in tokens:
        r = rng.random()
        if r < persona.del_rate:
            edits += 1
        else:
            rate = persona.sub_rate_cjk if script is Script.CJK else persona.sub_rate_latin
            if rng.random() < rate:
                cands = persona.homophone_table.get(surface)
                if not cands and script is not Script.LATIN:
                    # Latin words only swap to listed confusions; other scripts fall back to the pool
                    cands = [c for c in pools[script] if c != surface]
                if cands:
                    out.append(rng.choice(list(cands)))
                    edits += 1
                else:
                    out.append(surface)
            else:
                out.append(surface)
        if rng.random() < persona.ins_rate:
            out.append(rng.choice(pools[Script.CJK]))
            edits += 1
    return out, edits


def corrupt(ref: TokenSequence, persona: NoisePersona, seed, k: int = 1,
            grammar: Grammar | None = None, max_tries: int = 50) -> list[tuple[str, int]]:
    """Up to ``k`` distinct noisy renderings of ``ref``, fewest edits first.

    Returns (text, edit_count) pairs. Fewer than ``k`` come back when the
    persona cannot produce that many distinct outputs (e.g. zero noise).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    grammar = grammar or load_grammar()
    rng = random.Random(f"{seed}:{persona.name}")
    base: list[tuple[str, Script]] = []
    for tok in ref:
        if persona.transliterate_latin and tok.script is Script.LATIN:
            # unknown words have no phonetic rendering and are dropped
            for ch in persona.transliterations.get(tok.surface, ""):
                base.append((ch, Script.CJK))
        else:
            base.append((tok.surface, tok.script))
    pools = {
        Script.CJK: grammar.cjk_pool(),
        Script.LATIN: sorted(e.word for e in grammar.lexicon),
        Script.NUMERIC: [str(d) for d in range(10)],
    }
    noiseless = max(persona.sub_rate_cjk, persona.sub_rate_latin, persona.del_rate, persona.ins_rate) == 0
    seen: dict[tuple[str, ...], int] = {}
    order: list[tuple[str, ...]] = []
    tries = 1 if noiseless else max(k, max_tries)
    for _ in range(tries):
        toks, edits = _one_sample(base, persona, rng, pools)
        key = tuple(toks)
        if key not in seen:
            seen[key] = edits
            order.append(key)
            if len(order) == k:
                break
    ranked = sorted(order, key=lambda key: seen[key])  # stable: draw order breaks ties
    return [(detokenize(tokenize(" ".join(key))), seen[key]) for key in ranked]


@dataclass(frozen=True)
class SplitSpec:
    train_count: int
    test_count: int
    seed: int

    def __post_init__(self):
        if self.train_count < 0 or self.test_count < 0:
            raise ValueError("split counts must be >= 0")


def split(corpus: Sequence[Utterance], spec: SplitSpec, manifest_path=None):
    if spec.train_count + spec.test_count > len(corpus):
        raise SplitTooLarge(f"{spec.train_count}+{spec.test_count} > corpus size {len(corpus)}")
    order = list(range(len(corpus)))
    random.Random(spec.seed).shuffle(order)
    train = [corpus[i] for i in order[: spec.train_count]]
    test = [corpus[i] for i in order[spec.train_count: spec.train_count + spec.test_count]]
    if manifest_path is not None:
        manifest = {"split": asdict(spec), "train": [u.utt_id for u in train], "test": [u.utt_id for u in test]}
        Path(manifest_path).write_text(json.dumps(manifest, ensure_ascii=False, indent=1), encoding="utf-8")
    return train, test


def hypotheses_for(corpus: Sequence[Utterance], personas: Sequence[NoisePersona], beams: dict[str, int],
                   seed: int, grammar: Grammar | None = None) -> list[Hypothesis]:
    hyps = []
    for u in corpus:
        for p in personas:
            beam = corrupt(u.ref, p, f"{seed}:{u.utt_id}", beams.get(p.name, 1), grammar)
            for rank, (text, edits) in enumerate(beam, 1):
                hyps.append(Hypothesis(u.utt_id, p.name, rank, text, float(-edits)))
    return hyps


def coverage(corpus: Sequence[Utterance], hyps: Sequence[Hypothesis], spec: EnsembleSpec | None = None) -> float:
    """Fraction of utterances whose (ensemble) list leaves no reference token uncovered."""
    by_utt: dict[str, dict[str, list[Hypothesis]]] = {}
    for h in hyps:
        by_utt.setdefault(h.utt_id, {}).setdefault(h.system, []).append(h)
    covered = 0
    for u in corpus:
        per = by_utt.get(u.utt_id, {})
        if spec is not None:
            lst = build_ensemble(u.utt_id, per, spec).entries
        else:
            lst = [h for hs in per.values() for h in hs]
        if lst and oracle_cp(u.ref, lst) == 0.0:
            covered += 1
    return covered / len(corpus) if corpus else 0.0


def emit_hypotheses(corpus: Sequence[Utterance], personas: Sequence[NoisePersona], beams: dict[str, int],
                    seed: int, out_dir, spec: EnsembleSpec | None = None) -> dict:
    """Write hypotheses.jsonl and refs.jsonl; returns summary stats."""
    out_dir = Path(out_dir)
    hyps = hypotheses_for(corpus, personas, beams, seed)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "hypotheses.jsonl", "w", encoding="utf-8") as f:
            for h in hyps:
                f.write(json.dumps(h.to_record(), ensure_ascii=False) + "\n")
        with open(out_dir / "refs.jsonl", "w", encoding="utf-8") as f:
            for u in corpus:
                f.write(json.dumps({"utt_id": u.utt_id, "text": u.text}, ensure_ascii=False) + "\n")
    except OSError as e:
        raise OSError(f"writing corpus files under {out_dir}: {e}") from e
    return {"utterances": len(corpus), "hypotheses": len(hyps), "coverage": coverage(corpus, hyps, spec)}


def pretraining_corpus(n: int, seed: int, grammar: Grammar | None = None,
                       translit_frac: float = 0.3, gloss_reps: int = 40) -> list[list[str]]:
    """Token sequences for base-model pretraining.

    Clean code-switched sentences, a share of them restated with loanwords
    spelled phonetically in CJK (as Chinese text often does), and glossary
    lines pairing each English word with its phonetic rendering in both
    directions. Nothing here is an N-best prompt.
    """
    grammar = grammar or load_grammar()
    translit = grammar.transliterations
    rng = random.Random(f"{seed}:pretrain")
    out: list[list[str]] = []
    for u in generate_corpus(n, seed, grammar, prefix="pre"):
        out.append(u.ref.surfaces)
        if rng.random() < translit_frac:
            phon: list[str] = []
            for tok in u.ref:
                phon.extend(translit.get(tok.surface, tok.surface) if tok.script is Script.LATIN else [tok.surface])
            out.append(phon)
    for e in grammar.lexicon:
        for _ in range(gloss_reps):
            out.append([e.word, *e.transliteration])
            out.append([*e.transliteration, e.word])
    rng.shuffle(out)
    return out
