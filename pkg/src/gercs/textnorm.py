"""Mixed Mandarin-English normalization and tokenization.

Mandarin is scored per character and English per word, so a token is either
one CJK ideograph, one lowercased Latin word (apostrophes allowed inside the
word), or one run of ASCII digits. Everything else is dropped.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Sequence


class Script(enum.Enum):
    CJK = "CJK"
    LATIN = "LATIN"
    NUMERIC = "NUMERIC"
    OTHER = "OTHER"


_CJK_RANGES = (
    (0x4E00, 0x9FFF),  # CJK Unified Ideographs
    (0x3400, 0x4DBF),  # Extension A
)


def _fold_fullwidth(ch: str) -> str:
    cp = ord(ch)
    if 0xFF01 <= cp <= 0xFF5E:
        return chr(cp - 0xFEE0)
    if cp == 0x3000:
        return " "
    return ch


def script_of(ch: str | int) -> Script:
    """Classify a single code point by Unicode block."""
    cp = ch if isinstance(ch, int) else ord(ch)
    for lo, hi in _CJK_RANGES:
        if lo <= cp <= hi:
            return Script.CJK
    if 0x41 <= cp <= 0x5A or 0x61 <= cp <= 0x7A:
        return Script.LATIN
    if 0x30 <= cp <= 0x39:
        return Script.NUMERIC
    return Script.OTHER


@dataclass(frozen=True)
class Token:
    surface: str
    script: Script

    def __str__(self) -> str:
        return self.surface


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[Token, ...] = ()
    source_text: str = field(default="", compare=False)

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[Token]:
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    @property
    def surfaces(self) -> list[str]:
        return [t.surface for t in self.tokens]

    def count(self, script: Script) -> int:
        return sum(1 for t in self.tokens if t.script is script)


def _flush_latin(buf: list[str], out: list[Token]) -> None:
    word = "".join(buf).strip("'").lower()
    buf.clear()
    if word:
        out.append(Token(word, Script.LATIN))


def tokenize(text: str) -> TokenSequence:
    tokens: list[Token] = []
    latin: list[str] = []
    digits: list[str] = []
    for raw in text:
        ch = _fold_fullwidth(raw)
        script = script_of(ch)
        if script is Script.LATIN or (ch == "'" and latin):
            if digits:
                tokens.append(Token("".join(digits), Script.NUMERIC))
                digits.clear()
            latin.append(ch)
            continue
        if latin:
            _flush_latin(latin, tokens)
        if script is Script.NUMERIC:
            digits.append(ch)
            continue
        if digits:
            tokens.append(Token("".join(digits), Script.NUMERIC))
            digits.clear()
        if script is Script.CJK:
            tokens.append(Token(ch, Script.CJK))
    if latin:
        _flush_latin(latin, tokens)
    if digits:
        tokens.append(Token("".join(digits), Script.NUMERIC))
    return TokenSequence(tuple(tokens), text)


def detokenize(seq: TokenSequence | Sequence[Token]) -> str:
    """Join tokens back into text; spaces only between adjacent non-CJK tokens."""
    parts: list[str] = []
    prev: Token | None = None
    for tok in seq:
        if prev is not None and prev.script is not Script.CJK and tok.script is not Script.CJK:
            parts.append(" ")
        parts.append(tok.surface)
        prev = tok
    return "".join(parts)


def from_surfaces(surfaces: Sequence[str]) -> TokenSequence:
    """Rebuild a TokenSequence from bare token strings (e.g. model output)."""
    return tokenize(" ".join(surfaces))


def ensure_tokens(x: TokenSequence | str | Sequence[str]) -> TokenSequence:
    if isinstance(x, TokenSequence):
        return x
    if isinstance(x, str):
        return tokenize(x)
    return from_surfaces(list(x))
