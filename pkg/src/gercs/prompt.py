"""Prompt serialization of N-best lists and H2T training pairs."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

from .errors import ContextOverflow, EmptyNBest, EmptyReference
from .nbest import NBestList
from .textnorm import ensure_tokens

EOS = "<eos>"


@dataclass(frozen=True)
class PromptTemplate:
    task_marker: str = "<task>"
    best_marker: str = "<best>"
    hyp_marker: str = "<hyp>"
    output_marker: str = "<out>"
    max_hyps: int = 8

    def __post_init__(self):
        markers = self.markers
        if len(set(markers)) != len(markers) or EOS in markers:
            raise ValueError("prompt markers must be distinct and differ from EOS")
        if self.max_hyps < 1:
            raise ValueError("max_hyps must be >= 1")

    @property
    def markers(self) -> tuple[str, ...]:
        return (self.task_marker, self.best_marker, self.hyp_marker, self.output_marker)


@dataclass
class FormattedPrompt:
    tokens: list[str]
    truncated: bool = False
    dropped: int = 0


@dataclass
class H2TPair:
    utt_id: str
    input_tokens: list[str]
    target_tokens: list[str]  # reference tokens followed by EOS

    @property
    def tokens(self) -> list[str]:
        return self.input_tokens + self.target_tokens

    @property
    def loss_mask(self) -> list[bool]:
        return [False] * len(self.input_tokens) + [True] * len(self.target_tokens)

    def __len__(self) -> int:
        return len(self.input_tokens) + len(self.target_tokens)


def format_prompt(nbest: NBestList, template: PromptTemplate = PromptTemplate()) -> FormattedPrompt:
    """<task> <best> h1 [<hyp> h_i ...] <out>, keeping at most ``max_hyps`` entries."""
    entries = nbest.entries if isinstance(nbest, NBestList) else list(nbest)
    if not entries:
        raise EmptyNBest(f"empty N-best list for {getattr(nbest, 'utt_id', '?')!r}")
    kept = entries[: template.max_hyps]
    toks = [template.task_marker, template.best_marker]
    toks += ensure_tokens(_text(kept[0])).surfaces
    for h in kept[1:]:
        toks.append(template.hyp_marker)
        toks += ensure_tokens(_text(h)).surfaces
    toks.append(template.output_marker)
    dropped = len(entries) - len(kept)
    return FormattedPrompt(toks, dropped > 0, dropped)


def _text(h) -> str:
    return getattr(h, "text", h)


def make_pair(
    nbest: NBestList,
    ref,
    template: PromptTemplate = PromptTemplate(),
    max_context: int | None = None,
) -> H2TPair:
    utt_id = getattr(nbest, "utt_id", "")
    ref = ensure_tokens(ref)
    if len(ref) == 0:
        raise EmptyReference(f"empty reference for utterance {utt_id!r}")
    prompt = format_prompt(nbest, template)
    pair = H2TPair(utt_id, prompt.tokens, ref.surfaces + [EOS])
    if max_context is not None and len(pair) > max_context:
        raise ContextOverflow(len(pair), max_context, utt_id)
    return pair


def write_pairs(path, pairs: Iterable[H2TPair]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in pairs:
            rec = {"utt_id": p.utt_id, "input": p.input_tokens, "target": p.target_tokens}
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_pairs(path) -> list[H2TPair]:
    pairs = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rec = json.loads(line)
                pairs.append(H2TPair(rec["utt_id"], list(rec["input"]), list(rec["target"])))
    return pairs
