"""Per-utterance hypothesis lists and multi-system ensembling."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from .errors import DuplicateHypothesis, MissingSystem, ParseError
from .textnorm import tokenize


@dataclass(frozen=True)
class Hypothesis:
    utt_id: str
    system: str
    rank: int
    text: str
    score: float | None = None

    def to_record(self) -> dict:
        return {"utt_id": self.utt_id, "system": self.system, "rank": self.rank,
                "text": self.text, "score": self.score}


@dataclass
class NBestList:
    utt_id: str
    entries: list[Hypothesis] = field(default_factory=list)
    provenance: dict[str, int] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def texts(self) -> list[str]:
        return [h.text for h in self.entries]


@dataclass(frozen=True)
class EnsembleMember:
    system: str
    take: int
    optional: bool = False


@dataclass
class EnsembleSpec:
    """Ordered (system, take) pairs; the first system supplies the best hypothesis."""

    members: list[EnsembleMember]

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble spec needs at least one system")
        if any(m.take < 0 for m in self.members):
            raise ValueError("take must be >= 0")
        if not any(m.take > 0 for m in self.members):
            raise ValueError("at least one system must have take > 0")

    @classmethod
    def parse(cls, text: str) -> "EnsembleSpec":
        """Parse ``"sysA:5,sysB:1,sysC?:1"``; a trailing ``?`` marks a system optional."""
        members = []
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            name, _, take = part.partition(":")
            name = name.strip()
            optional = name.endswith("?")
            members.append(EnsembleMember(name.rstrip("?"), int(take or 1), optional))
        return cls(members)

    def __str__(self) -> str:
        return ",".join(f"{m.system}{'?' if m.optional else ''}:{m.take}" for m in self.members)

    @property
    def systems(self) -> list[str]:
        return [m.system for m in self.members]


HypothesisTable = dict[str, dict[str, list[Hypothesis]]]


def _parse_record(line: str, lineno: int) -> Hypothesis:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", lineno) from None
    if not isinstance(rec, dict):
        raise ParseError("record is not an object", lineno)
    for key, typ in (("utt_id", str), ("system", str), ("text", str)):
        if not isinstance(rec.get(key), typ):
            raise ParseError(f"field {key!r} missing or not a string", lineno)
    rank = rec.get("rank")
    if not isinstance(rank, int) or isinstance(rank, bool) or rank < 1:
        raise ParseError(f"rank must be an integer >= 1, got {rank!r}", lineno)
    score = rec.get("score")
    if score is not None and (not isinstance(score, (int, float)) or isinstance(score, bool)):
        raise ParseError("score must be a number or null", lineno)
    return Hypothesis(rec["utt_id"], rec["system"], rank, rec["text"],
                      None if score is None else float(score))


def load_hypotheses(lines: Iterable[str]) -> HypothesisTable:
    """Group hypothesis records by utterance and system, rank-sorted."""
    table: HypothesisTable = defaultdict(lambda: defaultdict(list))
    seen: set[tuple[str, str, int]] = set()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        hyp = _parse_record(line, lineno)
        key = (hyp.utt_id, hyp.system, hyp.rank)
        if key in seen:
            raise DuplicateHypothesis(f"line {lineno}: duplicate {key}")
        seen.add(key)
        table[hyp.utt_id][hyp.system].append(hyp)
    out: HypothesisTable = {}
    for utt_id in sorted(table):
        out[utt_id] = {s: sorted(hs, key=lambda h: h.rank) for s, hs in sorted(table[utt_id].items())}
    return out


def load_refs(lines: Iterable[str]) -> dict[str, str]:
    refs: dict[str, str] = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e.msg}", lineno) from None
        if not isinstance(rec, dict) or not isinstance(rec.get("utt_id"), str) \
                or not isinstance(rec.get("text"), str):
            raise ParseError("expected {utt_id: str, text: str}", lineno)
        if rec["utt_id"] in refs:
            raise ParseError(f"duplicate utt_id {rec['utt_id']!r}", lineno)
        refs[rec["utt_id"]] = rec["text"]
    return refs


def build_ensemble(utt_id: str, per_system: dict[str, list[Hypothesis]], spec: EnsembleSpec) -> NBestList:
    """Top ``take`` ranks from each spec system, in spec order."""
    out = NBestList(utt_id)
    for m in spec.members:
        hyps = per_system.get(m.system)
        if not hyps:
            if m.take > 0 and not m.optional:
                raise MissingSystem(f"system {m.system!r} missing for utterance {utt_id!r}")
            out.provenance[m.system] = 0
            if m.take > 0:
                out.flags.append(f"missing:{m.system}")
            continue
        ranked = sorted(hyps, key=lambda h: h.rank)
        taken = ranked[: m.take]
        if len(taken) < m.take:
            out.flags.append(f"short_beam:{m.system}:{len(taken)}/{m.take}")
        out.entries.extend(taken)
        out.provenance[m.system] = len(taken)
    return out


def build_ensembles(table: HypothesisTable, spec: EnsembleSpec) -> dict[str, NBestList]:
    return {utt_id: build_ensemble(utt_id, per_system, spec) for utt_id, per_system in table.items()}


def dedup(nbest: NBestList) -> NBestList:
    """Drop entries whose token sequence repeats an earlier entry."""
    seen: set[tuple[str, ...]] = set()
    out = NBestList(nbest.utt_id, flags=list(nbest.flags))
    prov: dict[str, int] = {s: 0 for s in nbest.provenance}
    for h in nbest.entries:
        key = tuple(tokenize(h.text).surfaces)
        if key in seen:
            continue
        seen.add(key)
        out.entries.append(h)
        prov[h.system] = prov.get(h.system, 0) + 1
    out.provenance = prov
    return out


def one_best(table: HypothesisTable, system: str) -> dict[str, str]:
    """Rank-1 text of one system for every utterance that has it."""
    return {u: per[system][0].text for u, per in table.items() if per.get(system)}


def write_hypotheses(path, hyps: Iterable[Hypothesis]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for h in hyps:
            f.write(json.dumps(h.to_record(), ensure_ascii=False) + "\n")


def write_refs(path, refs: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for utt_id, text in refs.items():
            f.write(json.dumps({"utt_id": utt_id, "text": text}, ensure_ascii=False) + "\n")
