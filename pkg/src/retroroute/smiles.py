"""Tokenization, fragment-group handling and normalization of molecule strings.

Molecule strings follow the SMILES token grammar used by transformer-based
reaction models. Multi-fragment compounds are written with ``.`` between
fragments; fragments known to belong to one compound are tied with ``~`` so
that downstream splitting keeps them as a single unit.
"""

from __future__ import annotations

import re
import subprocess
import threading
from dataclasses import dataclass
from typing import Iterator, List, Sequence, Tuple

from .errors import (
    IndexOutOfRange,
    MalformedAnnotation,
    MalformedReaction,
    NotCanonicalizable,
    UnparsableCharacter,
)

# Token grammar of the Molecular Transformer family: bracket atoms, two-letter
# halogens, organic subset atoms, ring digits and %nn ring bonds, bond and
# branch punctuation, the ~ fragment tie and reaction arrows.
TOKEN_PATTERN = (
    r"(\[[^\]]+\]|Br?|Cl?|N|O|S|P|F|I|b|c|n|o|s|p|"
    r"\(|\)|\.|=|#|-|\+|\\|/|:|~|@|\?|>>?|\*|\$|%[0-9]{2}|[0-9])"
)
_TOKEN_RE = re.compile(TOKEN_PATTERN)

# Tokens that represent an atom (used by the simplicity surrogate).
_ATOM_RE = re.compile(r"\[[^\]]+\]|Br|Cl|[NOSPFI]|B|C|[bcnosp]")


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int


@dataclass(frozen=True)
class TokenStream:
    """Lossless token sequence: joining the texts reproduces the input."""

    tokens: Tuple[Token, ...]

    @property
    def texts(self) -> List[str]:
        return [t.text for t in self.tokens]

    def __iter__(self) -> Iterator[Token]:
        return iter(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def join(self) -> str:
        return "".join(t.text for t in self.tokens)


def tokenize(s: str) -> TokenStream:
    """Tokenize a molecule or reaction string.

    Raises UnparsableCharacter at the first byte outside the token grammar.
    """
    if not s:
        raise UnparsableCharacter(s, 0)
    tokens: List[Token] = []
    pos = 0
    for m in _TOKEN_RE.finditer(s):
        if m.start() != pos:
            raise UnparsableCharacter(s, pos)
        tokens.append(Token(m.group(0), m.start(), m.end()))
        pos = m.end()
    if pos != len(s):
        raise UnparsableCharacter(s, pos)
    return TokenStream(tuple(tokens))


def atom_count(s: str) -> int:
    """Number of atom tokens in a molecule string."""
    return sum(1 for t in tokenize(s) if _ATOM_RE.fullmatch(t.text))


# --- fragment-group annotation ---------------------------------------------

_ANNOTATION_RE = re.compile(r"^(?P<body>\S+)(?: \|f:(?P<groups>[0-9.,]+)\|)?$")


def parse_fragment_groups(annotated: str) -> Tuple[str, List[List[int]]]:
    """Split ``BODY |f:1.2,4.5|`` into the body and the parsed index groups.

    A missing annotation yields empty groups. Indices must be unique and
    smaller than the number of ``.``-separated fragments of the body.
    """
    m = _ANNOTATION_RE.match(annotated)
    if m is None:
        raise MalformedAnnotation(f"bad annotation syntax: {annotated!r}")
    body = m.group("body")
    raw = m.group("groups")
    if raw is None:
        return body, []
    groups: List[List[int]] = []
    for part in raw.split(","):
        pieces = part.split(".")
        if any(not p.isdigit() for p in pieces) or len(pieces) < 2:
            raise MalformedAnnotation(f"bad group {part!r} in {annotated!r}")
        groups.append([int(p) for p in pieces])
    n_fragments = len(body.split("."))
    seen = set()
    for group in groups:
        for idx in group:
            if idx in seen:
                raise MalformedAnnotation(f"duplicate index {idx} in {annotated!r}")
            seen.add(idx)
            if idx >= n_fragments:
                raise IndexOutOfRange(
                    f"index {idx} >= fragment count {n_fragments} in {annotated!r}"
                )
    return body, groups


def render_fragment_groups(body: str, groups: Sequence[Sequence[int]]) -> str:
    """Inverse of parse_fragment_groups."""
    if not groups:
        return body
    rendered = ",".join(".".join(str(i) for i in g) for g in groups)
    return f"{body} |f:{rendered}|"


def bind_fragments(body: str, groups: Sequence[Sequence[int]]) -> str:
    """Join grouped fragments with ``~`` so they travel as one unit.

    Grouped fragments become adjacent (joined by ``~``, in index order);
    units are emitted in order of their smallest original fragment index.
    """
    fragments = body.split(".")
    seen = set()
    for group in groups:
        for idx in group:
            if idx >= len(fragments) or idx < 0:
                raise IndexOutOfRange(f"index {idx} >= fragment count {len(fragments)}")
            if idx in seen:
                raise IndexOutOfRange(f"duplicate index {idx}")
            seen.add(idx)
    units: List[Tuple[int, str]] = []
    for group in groups:
        ordered = sorted(group)
        units.append((ordered[0], "~".join(fragments[i] for i in ordered)))
    for idx, frag in enumerate(fragments):
        if idx not in seen:
            units.append((idx, frag))
    units.sort(key=lambda item: item[0])
    return ".".join(text for _, text in units)


def split_units(side: str) -> List[str]:
    """Split a molecule list on ``.`` keeping ``~``-tied fragments whole."""
    return side.split(".") if side else []


def split_reaction(rxn: str) -> Tuple[List[str], List[str]]:
    """Split ``precursors>>products`` into the two molecule lists."""
    parts = rxn.split(">>")
    if len(parts) != 2:
        raise MalformedReaction(
            f"expected exactly one '>>' separator, got {len(parts) - 1}: {rxn!r}"
        )
    return split_units(parts[0]), split_units(parts[1])


# --- normalizers ------------------------------------------------------------


class Normalizer:
    """Maps a raw molecule string to the normal form used as node identity."""

    def normalize(self, s: str) -> str:
        raise NotImplementedError


class ToyNormalizer(Normalizer):
    """Sort-based normal form for the synthetic chemistry used in tests.

    Validates the token grammar, sorts ``~``-tied members inside each unit,
    then sorts the units themselves. Idempotent by construction. The
    ``profile`` label distinguishes plain canonicalization from the
    tautomer-standardizing profile used when preparing model inputs; the toy
    grammar has no tautomers, so both profiles share the behavior.
    """

    def __init__(self, profile: str = "canonical"):
        self.profile = profile

    def normalize(self, s: str) -> str:
        if not s or any(ch.isspace() for ch in s):
            raise NotCanonicalizable(f"empty or whitespace-bearing input: {s!r}")
        try:
            tokenize(s)
        except UnparsableCharacter as exc:
            raise NotCanonicalizable(str(exc)) from exc
        units = []
        for unit in split_units(s):
            members = unit.split("~")
            if any(not m for m in members):
                raise NotCanonicalizable(f"empty fragment in {s!r}")
            units.append("~".join(sorted(members)))
        if not units:
            raise NotCanonicalizable(f"no fragments in {s!r}")
        return ".".join(sorted(units))

    def __repr__(self) -> str:
        return f"ToyNormalizer(profile={self.profile!r})"


class ExternalNormalizer(Normalizer):
    """Normalizer backed by a user-supplied canonicalization command.

    The command is spawned once and spoken to line-by-line: one molecule in,
    one canonical form out. An empty or missing reply marks the molecule as
    not canonicalizable. Access to the child process is serialized.
    """

    def __init__(self, command: Sequence[str]):
        self.command = list(command)
        self._lock = threading.Lock()
        self._proc: subprocess.Popen | None = None

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def normalize(self, s: str) -> str:
        if not s or any(ch.isspace() for ch in s):
            raise NotCanonicalizable(f"empty or whitespace-bearing input: {s!r}")
        with self._lock:
            proc = self._ensure()
            try:
                assert proc.stdin is not None and proc.stdout is not None
                proc.stdin.write(s + "\n")
                proc.stdin.flush()
                reply = proc.stdout.readline().strip()
            except (BrokenPipeError, OSError) as exc:
                raise NotCanonicalizable(f"normalizer process failed: {exc}") from exc
        if not reply:
            raise NotCanonicalizable(f"external normalizer rejected {s!r}")
        return reply

    def close(self) -> None:
        with self._lock:
            if self._proc is not None and self._proc.poll() is None:
                self._proc.terminate()
                self._proc.wait(timeout=5)
            self._proc = None
