"""Grapheme-level confusable generation.

A confusable is produced from a keyword by composing single-grapheme edits:
insertion, deletion, and class-preserving substitution (vowel for vowel,
consonant for consonant). Every generated phrase carries its edit trace and
a verified Levenshtein distance to the keyword.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import random
import string
from dataclasses import dataclass, field
from typing import Iterable, Iterator

logger = logging.getLogger(__name__)

SEPARATOR = " "
DEFAULT_ENUMERATION_BUDGET = 5_000_000


class GraphemeError(ValueError):
    """Raised for out-of-alphabet symbols and invalid edit requests."""


class GraphemeClass(enum.Enum):
    VOWEL = "vowel"
    CONSONANT = "consonant"
    SEPARATOR = "separator"
    OTHER = "other"


class EditKind(enum.Enum):
    INSERT = "insert"
    DELETE = "delete"
    SUBSTITUTE = "substitute"


@dataclass(frozen=True)
class EditConfig:
    """Alphabet and edit rules.

    The defaults are calibrated so that "hey google" has exactly 433
    single-edit neighbours: 'y' is a consonant, and the word separator may be
    deleted (merging words) or swapped with any letter, but is never inserted.
    Edits leaving an empty word are always discarded.
    """

    alphabet: str = string.ascii_lowercase + SEPARATOR
    vowels: frozenset[str] = frozenset("aeiou")
    separator: str = SEPARATOR
    separator_editable: bool = True
    separator_insertable: bool = False
    case_folding: bool = True

    def __post_init__(self):
        if len(set(self.alphabet)) != len(self.alphabet):
            raise GraphemeError("alphabet contains duplicate symbols")
        if self.separator not in self.alphabet:
            raise GraphemeError("separator must be part of the alphabet")
        if not set(self.vowels) <= set(self.alphabet):
            raise GraphemeError("vowels must be a subset of the alphabet")
        if self.separator in self.vowels:
            raise GraphemeError("the separator cannot be a vowel")
        object.__setattr__(self, "vowels", frozenset(self.vowels))

    @property
    def letters(self) -> str:
        return "".join(c for c in self.alphabet if c != self.separator)

    def normalize(self, phrase: str) -> str:
        return phrase.lower() if self.case_folding else phrase


DEFAULT_CONFIG = EditConfig()


@dataclass(frozen=True)
class EditOp:
    kind: EditKind
    position: int
    grapheme: str | None = None

    def apply(self, text: str) -> str:
        if self.kind is EditKind.INSERT:
            return text[: self.position] + self.grapheme + text[self.position :]
        if self.kind is EditKind.DELETE:
            return text[: self.position] + text[self.position + 1 :]
        return text[: self.position] + self.grapheme + text[self.position + 1 :]

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "position": self.position, "grapheme": self.grapheme}

    @classmethod
    def from_dict(cls, d: dict) -> "EditOp":
        return cls(EditKind(d["kind"]), int(d["position"]), d.get("grapheme"))


@dataclass(frozen=True)
class Confusable:
    text: str
    ops: tuple[EditOp, ...] = field(default=())
    distance: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {"text": self.text, "distance": self.distance, "ops": [op.to_dict() for op in self.ops]},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "Confusable":
        d = json.loads(line)
        return cls(d["text"], tuple(EditOp.from_dict(o) for o in d["ops"]), int(d["distance"]))


def write_jsonl(confusables: Iterable[Confusable], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for c in confusables:
            f.write(c.to_json() + "\n")
            n += 1
    return n


def read_jsonl(path) -> list[Confusable]:
    with open(path, encoding="utf-8") as f:
        return [Confusable.from_json(line) for line in f if line.strip()]


def classify(grapheme: str, config: EditConfig = DEFAULT_CONFIG) -> GraphemeClass:
    if grapheme not in config.alphabet:
        raise GraphemeError(f"{grapheme!r} is not in the alphabet")
    if grapheme == config.separator:
        return GraphemeClass.SEPARATOR
    if grapheme in config.vowels:
        return GraphemeClass.VOWEL
    if grapheme.isalpha():
        return GraphemeClass.CONSONANT
    return GraphemeClass.OTHER


def substitution_allowed(old: str, new: str, config: EditConfig = DEFAULT_CONFIG) -> bool:
    """Whether ``old`` may be replaced by ``new`` in a single substitution."""
    if old == new:
        return False
    a, b = classify(old, config), classify(new, config)
    if GraphemeClass.SEPARATOR in (a, b):
        # the separator has no vowel/consonant class; it swaps with any letter when editable
        return config.separator_editable
    return a is b


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (bit-parallel, Myers/Hyyro)."""
    if a == b:
        return 0
    if len(a) > len(b):
        a, b = b, a
    m = len(a)
    if m == 0:
        return len(b)
    peq: dict[str, int] = {}
    for i, c in enumerate(a):
        peq[c] = peq.get(c, 0) | (1 << i)
    full = (1 << m) - 1
    top = 1 << (m - 1)
    pv, mv, score = full, 0, m
    for c in b:
        eq = peq.get(c, 0)
        xv = eq | mv
        xh = (((eq & pv) + pv) ^ pv) | eq
        ph = (mv | ~(xh | pv)) & full
        mh = pv & xh
        if ph & top:
            score += 1
        elif mh & top:
            score -= 1
        ph = ((ph << 1) | 1) & full
        mh = (mh << 1) & full
        pv = (mh | ~(xv | ph)) & full
        mv = ph & xv
    return score


def has_empty_word(text: str, config: EditConfig = DEFAULT_CONFIG) -> bool:
    return not text or any(not w for w in text.split(config.separator))


def _prepare(phrase: str, config: EditConfig) -> str:
    phrase = config.normalize(phrase)
    if not phrase:
        raise GraphemeError("phrase must be nonempty")
    for c in phrase:
        classify(c, config)
    return phrase


def candidate_ops(text: str, config: EditConfig = DEFAULT_CONFIG) -> list[EditOp]:
    """Every admissible single edit of ``text``, in a fixed order.

    Different ops may produce the same string; callers dedupe on the result.
    """
    sep = config.separator
    ops: list[EditOp] = []
    for i, c in enumerate(text):
        if c != sep or config.separator_editable:
            ops.append(EditOp(EditKind.DELETE, i))
    for i, c in enumerate(text):
        for g in config.alphabet:
            if substitution_allowed(c, g, config):
                ops.append(EditOp(EditKind.SUBSTITUTE, i, g))
    pool = config.letters + (sep if config.separator_editable and config.separator_insertable else "")
    for i in range(len(text) + 1):
        for g in pool:
            ops.append(EditOp(EditKind.INSERT, i, g))
    return ops


def _neighbours(text: str, config: EditConfig) -> Iterator[tuple[str, EditOp]]:
    for op in candidate_ops(text, config):
        yield op.apply(text), op


def single_edits(phrase: str, config: EditConfig = DEFAULT_CONFIG) -> set[Confusable]:
    """All distinct strings one admissible edit away from ``phrase``."""
    return set(enumerate_exact(phrase, 1, config))


def enumerate_exact(phrase: str, d: int, config: EditConfig = DEFAULT_CONFIG) -> Iterator[Confusable]:
    """Lazily yield every confusable at verified Levenshtein distance exactly ``d``.

    Depth-first recursion over composed edits. A path of ``d`` edits ending at
    distance ``d`` passes through distance ``j`` after ``j`` edits, so branches
    whose distance falls behind their depth are pruned.
    """
    if d < 1:
        raise GraphemeError("edit distance must be >= 1; the keyword itself is never a confusable")
    keyword = _prepare(phrase, config)
    seen: list[set[str]] = [set() for _ in range(d + 1)]
    seen[0].add(keyword)

    def walk(text: str, ops: tuple[EditOp, ...], depth: int) -> Iterator[Confusable]:
        for nxt, op in _neighbours(text, config):
            if nxt in seen[depth + 1]:
                continue
            if levenshtein(keyword, nxt) != depth + 1:
                continue
            seen[depth + 1].add(nxt)
            trace = ops + (op,)
            if depth + 1 == d:
                if not has_empty_word(nxt, config):
                    yield Confusable(nxt, trace, d)
            else:
                yield from walk(nxt, trace, depth + 1)

    return walk(keyword, (), 0)


def estimate_candidates(phrase: str, d: int, config: EditConfig = DEFAULT_CONFIG) -> int:
    """Rough count of strings examined by a full enumeration at distance ``d``."""
    b = len(candidate_ops(_prepare(phrase, config), config))
    return math.comb(b + d - 1, d)


def _substitutes(c: str, config: EditConfig) -> str:
    return "".join(g for g in config.alphabet if substitution_allowed(c, g, config))


def random_op(text: str, rng: random.Random, config: EditConfig = DEFAULT_CONFIG, _cache: dict | None = None) -> EditOp:
    """Draw uniformly from ``candidate_ops(text)`` without materialising the list."""
    cache = {} if _cache is None else _cache
    subs = []
    for c in text:
        if c not in cache:
            cache[c] = _substitutes(c, config)
        subs.append(cache[c])
    sep = config.separator
    deletable = [i for i, c in enumerate(text) if c != sep or config.separator_editable]
    pool = config.letters + (sep if config.separator_editable and config.separator_insertable else "")
    n_sub = sum(len(s) for s in subs)
    k = rng.randrange(len(deletable) + n_sub + (len(text) + 1) * len(pool))
    if k < len(deletable):
        return EditOp(EditKind.DELETE, deletable[k])
    k -= len(deletable)
    if k < n_sub:
        for i, options in enumerate(subs):
            if k < len(options):
                return EditOp(EditKind.SUBSTITUTE, i, options[k])
            k -= len(options)
    k -= n_sub
    return EditOp(EditKind.INSERT, k // len(pool), pool[k % len(pool)])


def random_confusable(keyword: str, d: int, rng: random.Random, config: EditConfig = DEFAULT_CONFIG, _cache: dict | None = None) -> Confusable | None:
    """One random op sequence of length ``d``; None unless it lands at distance exactly ``d``."""
    text, trace = keyword, []
    for _ in range(d):
        op = random_op(text, rng, config, _cache)
        text = op.apply(text)
        trace.append(op)
    if text == keyword or has_empty_word(text, config) or levenshtein(keyword, text) != d:
        return None
    return Confusable(text, tuple(trace), d)


def sample_unique(
    phrase: str,
    d: int,
    n: int,
    seed: int,
    config: EditConfig = DEFAULT_CONFIG,
    *,
    budget: int = DEFAULT_ENUMERATION_BUDGET,
    exclude: Iterable[str] = (),
) -> list[Confusable]:
    """Sample ``n`` distinct confusables at exact distance ``d``.

    Small neighbourhoods are enumerated and reservoir-sampled, which is
    uniform. Above ``budget`` candidates the sampler draws random edit
    sequences and keeps verified, unseen results; that regime is not uniform
    over the exact-distance set. If fewer than ``n`` exist, all are returned
    and the shortfall is logged.
    """
    if n < 0:
        raise GraphemeError("n must be >= 0")
    if d < 1:
        raise GraphemeError("edit distance must be >= 1")
    if n == 0:
        return []
    keyword = _prepare(phrase, config)
    excluded = set(exclude)
    rng = random.Random(seed)

    if estimate_candidates(keyword, d, config) <= budget:
        reservoir: list[Confusable] = []
        stream = (c for c in enumerate_exact(keyword, d, config) if c.text not in excluded)
        for i, c in enumerate(stream):
            if i < n:
                reservoir.append(c)
            else:
                j = rng.randrange(i + 1)
                if j < n:
                    reservoir[j] = c
        result = reservoir
    else:
        result, seen = [], set(excluded)
        # the stall limit only triggers when the exact-distance set is nearly exhausted
        max_misses = max(10_000, 50 * n)
        misses = 0
        cache: dict = {}
        while len(result) < n and misses < max_misses:
            c = random_confusable(keyword, d, rng, config, cache)
            if c is None or c.text in seen:
                misses += 1
                continue
            seen.add(c.text)
            result.append(c)
            misses = 0
    if len(result) < n:
        logger.warning("only %d of %d confusables at distance %d exist for %r", len(result), n, d, keyword)
    return result
