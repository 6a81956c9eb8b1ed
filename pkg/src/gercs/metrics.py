"""Levenshtein alignment, mixed error rate (MER) and N-best oracles."""

from __future__ import annotations

import enum
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import DuplicateUtterance, EmptyNBest, EmptyReference
from .textnorm import Script, TokenSequence, ensure_tokens


class Op(enum.IntEnum):
    MATCH = 0
    SUB = 1
    DEL = 2
    INS = 3


@dataclass(frozen=True)
class AlignOp:
    op: Op
    ref_index: int | None
    hyp_index: int | None


@dataclass
class AlignmentResult:
    ops: list[AlignOp]
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def matches(self) -> int:
        return self.ref_len - self.substitutions - self.deletions

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions


@dataclass
class UtteranceScore:
    utt_id: str
    errors: int
    ref_len: int
    mer: float
    best_system: str | None = None
    best_index: int | None = None


@dataclass
class CorpusScore:
    total_errors: int
    total_ref_tokens: int
    mer: float
    utterances: list[UtteranceScore] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    per_system: dict[str, float] = field(default_factory=dict)


def _surfaces(x) -> list[str]:
    return ensure_tokens(x).surfaces


def align(ref, hyp) -> AlignmentResult:
    """Minimum unit-cost alignment of two token sequences.

    Backtrace ties are broken MATCH > SUB > DEL > INS.
    """
    r, h = _surfaces(ref), _surfaces(hyp)
    n, m = len(r), len(h)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        ri = r[i - 1]
        row, prev = d[i], d[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (0 if ri == h[j - 1] else 1)
            row[j] = min(diag, prev[j] + 1, row[j - 1] + 1)

    ops: list[AlignOp] = []
    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        here = d[i][j]
        if i > 0 and j > 0 and r[i - 1] == h[j - 1] and here == d[i - 1][j - 1]:
            ops.append(AlignOp(Op.MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and here == d[i - 1][j - 1] + 1:
            ops.append(AlignOp(Op.SUB, i - 1, j - 1))
            subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and here == d[i - 1][j] + 1:
            ops.append(AlignOp(Op.DEL, i - 1, None))
            dels += 1
            i -= 1
        else:
            ops.append(AlignOp(Op.INS, None, j - 1))
            ins += 1
            j -= 1
    ops.reverse()
    return AlignmentResult(ops, subs, dels, ins, n)


def score_utterance(ref, hyp, utt_id: str = "") -> UtteranceScore:
    ref = ensure_tokens(ref)
    if len(ref) == 0:
        raise EmptyReference(f"empty reference for utterance {utt_id!r}")
    a = align(ref, hyp)
    return UtteranceScore(utt_id, a.errors, a.ref_len, a.errors / a.ref_len)


def score_corpus(pairs: Iterable[tuple[str, object, object | None]]) -> CorpusScore:
    """Micro-averaged MER over (utt_id, ref, hyp) triples.

    A hyp of None means the system produced nothing for that utterance; it is
    scored as all deletions and listed in ``missing``.
    """
    seen: set[str] = set()
    utts: list[UtteranceScore] = []
    missing: list[str] = []
    for utt_id, ref, hyp in pairs:
        if utt_id in seen:
            raise DuplicateUtterance(utt_id)
        seen.add(utt_id)
        if hyp is None:
            missing.append(utt_id)
            hyp = TokenSequence()
        utts.append(score_utterance(ref, hyp, utt_id))
    errors = sum(u.errors for u in utts)
    total = sum(u.ref_len for u in utts)
    mer = errors / total if total else 0.0
    return CorpusScore(errors, total, mer, utts, missing)


def oracle_nbest(ref, nbest, utt_id: str | None = None) -> UtteranceScore:
    """Score of the best single hypothesis in the list (first one wins ties)."""
    entries = list(_entries(nbest))
    if not entries:
        raise EmptyNBest(f"empty N-best list for utterance {utt_id!r}")
    if utt_id is None:
        utt_id = getattr(nbest, "utt_id", "")
    best: UtteranceScore | None = None
    for idx, (system, text) in enumerate(entries):
        s = score_utterance(ref, text, utt_id)
        if best is None or s.errors < best.errors:
            s.best_index, s.best_system = idx, system
            best = s
    return best


def missing_tokens(ref, nbest) -> int:
    """Number of reference positions whose surface occurs in no hypothesis."""
    pool: set[str] = set()
    for _, text in _entries(nbest):
        pool.update(_surfaces(text))
    return sum(1 for s in _surfaces(ref) if s not in pool)


def latin_recovery(ref, nbest, pred) -> tuple[int, int]:
    """(recovered, total) over LATIN reference tokens written in Latin in no hypothesis.

    Counting is per occurrence: a word needed twice must appear twice in ``pred``.
    """
    pool: set[str] = set()
    for _, text in _entries(nbest):
        pool.update(_surfaces(text))
    needed = Counter(t.surface for t in ensure_tokens(ref) if t.script is Script.LATIN and t.surface not in pool)
    have = Counter(_surfaces(pred))
    return sum(min(n, have[w]) for w, n in needed.items()), sum(needed.values())


class EmptyNBestWarning(UserWarning):
    pass


def oracle_cp(ref, nbest) -> float:
    """Rate of reference tokens absent from every hypothesis in the list."""
    ref = ensure_tokens(ref)
    if len(ref) == 0:
        raise EmptyReference("empty reference")
    if not list(_entries(nbest)):
        warnings.warn("empty N-best list: every token counted missing", EmptyNBestWarning)
        return 1.0
    return missing_tokens(ref, nbest) / len(ref)


def _entries(nbest) -> Iterable[tuple[str | None, object]]:
    # NBestList, list of Hypothesis, or bare texts / token sequences
    items = getattr(nbest, "entries", nbest)
    for item in items:
        if hasattr(item, "system") and hasattr(item, "text"):
            yield item.system, item.text
        else:
            yield None, item


@dataclass
class EvalReport:
    corpus_mer: float
    per_system: dict[str, float]
    oracle_nb: float
    oracle_cp: float
    utterances: list[dict]
    missing: dict[str, list[str]] = field(default_factory=dict)
    seed: int | None = None
    config_hash: str | None = None

    def to_json(self) -> dict:
        out = asdict(self)
        for key in ("corpus_mer", "oracle_nb", "oracle_cp"):
            out[key] = pct(out[key])
        out["per_system"] = {k: pct(v) for k, v in self.per_system.items()}
        for u in out["utterances"]:
            u["mer"] = pct(u["mer"])
        return out


def pct(ratio: float) -> float:
    return round(100.0 * ratio, 1)


def evaluate(
    refs: Mapping[str, object],
    system_outputs: Mapping[str, Mapping[str, object]],
    nbest_lists: Mapping[str, object] | None = None,
    primary: str | None = None,
) -> EvalReport:
    """Corpus report: MER per system plus N-best oracles over the given lists.

    ``system_outputs`` maps system -> utt_id -> 1-best text. ``primary`` names
    the system whose MER is reported as ``corpus_mer`` (defaults to the first).
    """
    per_system: dict[str, float] = {}
    missing: dict[str, list[str]] = {}
    for system, outs in system_outputs.items():
        cs = score_corpus((u, r, outs.get(u)) for u, r in refs.items())
        per_system[system] = cs.mer
        if cs.missing:
            missing[system] = cs.missing
    if primary is None and per_system:
        primary = next(iter(per_system))
    corpus_mer = per_system.get(primary, 0.0)

    utterances: list[dict] = []
    nb_err = cp_miss = total = 0
    for utt_id, ref in refs.items():
        ref = ensure_tokens(ref)
        if len(ref) == 0:
            raise EmptyReference(utt_id)
        total += len(ref)
        row: dict = {"utt_id": utt_id, "ref_len": len(ref)}
        if primary is not None:
            s = score_utterance(ref, system_outputs[primary].get(utt_id, ""), utt_id)
            row.update(errors=s.errors, mer=s.mer)
        if nbest_lists is not None:
            lst = nbest_lists.get(utt_id)
            if lst is None or not list(_entries(lst)):
                nb_err += len(ref)
                cp_miss += len(ref)
                row["best_system"] = None
            else:
                o = oracle_nbest(ref, lst, utt_id)
                nb_err += o.errors
                cp_miss += missing_tokens(ref, lst)
                row["best_system"] = o.best_system
        utterances.append(row)
    oracle_nb = nb_err / total if total else 0.0
    o_cp = cp_miss / total if total else 0.0
    return EvalReport(corpus_mer, per_system, oracle_nb, o_cp, utterances, missing)
