"""Prompt template compiler and encoded prompt databases.

Template text uses two extensions on top of plain strings:

* ``{}`` is an insertion slot. Slots bind, left to right, to the next
  non-empty word list among descriptions, states and objects. A slot may
  name its list explicitly (``{desc}``, ``{state}``, ``{object}``). A
  template with fewer slots simply stops early.
* ``a|b|c`` is an in-place alternative. Inside template text it applies to
  the whitespace-delimited token that contains the bars; a word-list entry
  is always one term, so ``bear|teddy bear`` in ``[objects]`` gives two
  objects.
"""
from __future__ import annotations

import base64
import enum
import hashlib
import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

SLOT_LISTS = ("descriptions", "states", "objects")
_SLOT_ALIASES = {
    "": None,
    "desc": "descriptions",
    "description": "descriptions",
    "descriptions": "descriptions",
    "state": "states",
    "states": "states",
    "object": "objects",
    "objects": "objects",
}
_WS = re.compile(r"\s+")


class PromptSyntaxError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


@dataclass
class TemplateSpec:
    top_level: list[str] = field(default_factory=list)
    descriptions: list[str] = field(default_factory=list)
    states: list[str] = field(default_factory=list)
    objects: list[str] = field(default_factory=list)
    raw_prompts: list[str] = field(default_factory=list)
    # source line of each template, for error reporting
    lines: dict[str, int] = field(default_factory=dict, repr=False, compare=False)


def _split_alternatives(term: str, line: int, col: int) -> list[str]:
    parts = term.split("|")
    offset = col
    for p in parts:
        if p.strip() == "":
            raise PromptSyntaxError(f"empty alternative in {term!r}", line, offset)
        offset += len(p) + 1
    return [p.strip() for p in parts]


def _tokenize(template: str, line: int = 0) -> list[tuple[str, object]]:
    """Split a template into ('text', alternatives) and ('slot', list-name-or-None) pieces."""
    pieces: list[tuple[str, object]] = []
    i = 0
    n = len(template)
    buf_start = 0

    def flush(end: int):
        chunk = template[buf_start:end]
        if not chunk:
            return
        # keep whitespace runs as literal separators, expand barred tokens
        for m in re.finditer(r"\S+|\s+", chunk):
            tok = m.group()
            if "|" in tok and not tok.isspace():
                pieces.append(("text", _split_alternatives(tok, line, buf_start + m.start() + 1)))
            else:
                pieces.append(("text", [tok]))

    while i < n:
        ch = template[i]
        if ch == "{":
            flush(i)
            close = template.find("}", i + 1)
            nxt = template.find("{", i + 1)
            if close < 0 or (0 <= nxt < close):
                raise PromptSyntaxError("unbalanced '{'", line, i + 1)
            name = template[i + 1 : close].strip().lower()
            if name not in _SLOT_ALIASES:
                raise PromptSyntaxError(f"unknown slot name {name!r}", line, i + 1)
            pieces.append(("slot", _SLOT_ALIASES[name]))
            i = close + 1
            buf_start = i
            continue
        if ch == "}":
            raise PromptSyntaxError("unbalanced '}'", line, i + 1)
        i += 1
    flush(n)
    return pieces


def _expand_entries(entries: Sequence[str], line: int) -> list[str]:
    out = []
    for e in entries:
        out.extend(_split_alternatives(e, line, 1) if "|" in e else [e.strip()])
    return out


def normalize_whitespace(s: str) -> str:
    return _WS.sub(" ", s).strip()


def expand_template(template: str, spec: TemplateSpec | None = None, line: int = 0) -> list[str]:
    """Expand one template against the word lists in ``spec``."""
    spec = spec or TemplateSpec()
    lists = {name: _expand_entries(getattr(spec, name), line) for name in SLOT_LISTS}
    pieces = _tokenize(template, line)
    used: set[str] = set()
    choices: list[list[str]] = []
    for kind, value in pieces:
        if kind == "text":
            choices.append(value)  # type: ignore[arg-type]
            continue
        name = value
        if name is None:
            name = next((s for s in SLOT_LISTS if s not in used and lists[s]), None)
            if name is None:
                raise PromptSyntaxError(f"template {template!r} has more slots than non-empty word lists", line, 1)
        used.add(name)  # type: ignore[arg-type]
        choices.append(lists[name])  # type: ignore[index]
    return [normalize_whitespace("".join(combo)) for combo in itertools.product(*choices)]


def expand_templates(spec: TemplateSpec) -> list[str]:
    """All prompts of a spec: top-level templates first, then raw prompts, in source order."""
    out = []
    for t in list(spec.top_level) + list(spec.raw_prompts):
        out.extend(expand_template(t, spec, spec.lines.get(t, 0)))
    return out


def _dedupe(items: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(items))


@dataclass(frozen=True)
class PromptSet:
    positive: tuple[str, ...]
    negative: tuple[str, ...]

    def __init__(self, positive: Iterable[str] = (), negative: Iterable[str] = ()):
        object.__setattr__(self, "positive", tuple(_dedupe(positive)))
        object.__setattr__(self, "negative", tuple(_dedupe(negative)))
        if not self.positive and not self.negative:
            raise ValueError("a PromptSet needs at least one prompt")


# --------------------------------------------------------------------------
# Line-oriented file format


_SECTION = re.compile(r"^\[(\w+)\]$")
_SECTIONS = ("templates", "positive", "negative") + SLOT_LISTS


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def parse_sections(text: str, allowed: Sequence[str]) -> list[tuple[str, int, str]]:
    """Yield (section, lineno, entry) for a ``[section]``-headed, one-entry-per-line text."""
    section = None
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw)
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            section = m.group(1).lower()
            if section not in allowed:
                raise PromptSyntaxError(f"unknown section [{section}]", lineno, 1)
            out.append((section, lineno, ""))
            continue
        if section is None:
            raise PromptSyntaxError("entry before any [section] header", lineno, 1)
        out.append((section, lineno, line))
    return out


def parse_prompt_file(text: str) -> dict[str, TemplateSpec]:
    """Parse a prompt file into one :class:`TemplateSpec` per polarity.

    ``[positive]`` / ``[negative]`` headers open a polarity block; their own
    lines are raw prompts, and any ``[templates]`` or word-list sections that
    follow belong to that block. Sections before the first polarity header
    go to the ``""`` (unlabeled) spec.
    """
    specs: dict[str, TemplateSpec] = {}
    current = ""
    target = "raw_prompts"
    for section, lineno, entry in parse_sections(text, _SECTIONS):
        if section in ("positive", "negative"):
            current = section
            target = "raw_prompts"
        else:
            target = "top_level" if section == "templates" else section
        spec = specs.setdefault(current, TemplateSpec())
        if not entry:
            continue
        if current == "" and target == "raw_prompts":
            raise PromptSyntaxError("entry outside a section", lineno, 1)
        if target in ("top_level", "raw_prompts"):
            _tokenize(entry, lineno)  # syntax check with real line numbers
            spec.lines.setdefault(entry, lineno)
        else:
            _expand_entries([entry], lineno)
        getattr(spec, target).append(entry)
    return specs


def parse_template_spec(text: str) -> TemplateSpec:
    specs = parse_prompt_file(text)
    merged = TemplateSpec()
    for spec in specs.values():
        for name in ("top_level", "raw_prompts") + SLOT_LISTS:
            getattr(merged, name).extend(getattr(spec, name))
        merged.lines.update(spec.lines)
    return merged


def load_prompt_set(text: str) -> PromptSet:
    specs = parse_prompt_file(text)
    pos = expand_templates(specs["positive"]) if "positive" in specs else []
    neg = expand_templates(specs["negative"]) if "negative" in specs else []
    return PromptSet(pos, neg)


# --------------------------------------------------------------------------
# Embeddings


class EmbeddingProvider(Protocol):
    dim: int

    def encode(self, text: str) -> np.ndarray: ...


def quantize_unit(v: np.ndarray) -> np.ndarray:
    """Round a vector to float32-representable values whose float64 norm is 1 to ~1e-12.

    Plain float32 rounding leaves norm errors of several 1e-9; nudging a
    few components by single ulps (largest first, then progressively
    smaller for finer corrections) removes them deterministically. This
    needs embedding-sized vectors; with only a handful of components the
    float32 grid may not contain a point that close to the sphere.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0 or not np.isfinite(norm):
        raise ValueError("cannot normalize a zero or non-finite vector")
    q = (v / norm).astype(np.float32).astype(np.float64)
    order = np.argsort(-np.abs(q), kind="stable")
    err = float(q @ q) - 1.0
    for i in order:
        if abs(err) < 1e-12:
            break
        if q[i] == 0:
            continue
        new = float(np.float32(q[i] - err / (2.0 * q[i])))
        new_err = err + new * new - q[i] * q[i]
        if abs(new_err) < abs(err):
            q[i] = new
            err = float(q @ q) - 1.0
    return q


class HashEmbeddingProvider:
    """Deterministic text "encoder": a seeded hash of the text picks a random unit vector.

    Unrelated strings map to nearly orthogonal vectors (|cos| ~ 1/sqrt(dim)).
    Safe for concurrent use; it holds no mutable state.
    """

    def __init__(self, dim: int = 512, seed: int = 0):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed

    def encode(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}\x00{text}".encode("utf-8")).digest()
        rng = np.random.default_rng(np.frombuffer(digest, dtype=np.uint64))
        return quantize_unit(rng.standard_normal(self.dim))


class Polarity(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True, eq=False)
class EncodedPromptDB:
    vectors: np.ndarray  # (n, D) float64, each row float32-exact and unit norm
    polarity: tuple[Polarity, ...]
    texts: tuple[str, ...]

    def __post_init__(self):
        vecs = np.array(self.vectors, dtype=np.float64).reshape(len(self.texts), -1)
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)
        if len(self.polarity) != len(self.texts):
            raise ValueError("polarity and texts must have the same length")
        norms = np.linalg.norm(vecs, axis=1)
        if len(norms) and np.max(np.abs(norms - 1.0)) > 1e-9:
            raise ValueError("prompt embeddings must be unit norm")
        mask = np.array([p is Polarity.POSITIVE for p in self.polarity], dtype=bool)
        object.__setattr__(self, "_pos", vecs[mask])
        object.__setattr__(self, "_neg", vecs[~mask])

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.texts)

    @property
    def positives(self) -> np.ndarray:
        return self._pos  # type: ignore[attr-defined]

    @property
    def negatives(self) -> np.ndarray:
        return self._neg  # type: ignore[attr-defined]

    def counts(self) -> tuple[int, int]:
        return len(self.positives), len(self.negatives)

    def dumps(self) -> str:
        lines = [f"promptdb v1 D={self.dim}"]
        for vec, pol, text in zip(self.vectors, self.polarity, self.texts):
            if "\n" in text:
                raise ValueError(f"prompt text may not contain newlines: {text!r}")
            blob = base64.b64encode(vec.astype("<f4").tobytes()).decode("ascii")
            lines.append(f"{pol.value} {blob} {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "EncodedPromptDB":
        lines = text.splitlines()
        m = re.fullmatch(r"promptdb v1 D=(\d+)", lines[0].strip()) if lines else None
        if not m:
            raise ValueError("promptdb: bad header line")
        dim = int(m.group(1))
        vecs, pols, texts = [], [], []
        for lineno, line in enumerate(lines[1:], 2):
            if not line.strip():
                continue
            parts = line.split(" ", 2)
            if len(parts) < 2:
                raise ValueError(f"promptdb line {lineno}: expected '<polarity> <vector> <text>'")
            pol, blob = parts[0], parts[1]
            vec = np.frombuffer(base64.b64decode(blob), dtype="<f4").astype(np.float64)
            if vec.shape[0] != dim:
                raise ValueError(f"promptdb line {lineno}: vector has {vec.shape[0]} dims, header says {dim}")
            vecs.append(vec)
            pols.append(Polarity(pol))
            texts.append(parts[2] if len(parts) > 2 else "")
        return cls(np.array(vecs).reshape(len(vecs), dim), tuple(pols), tuple(texts))


def build_db(prompts: PromptSet, provider: EmbeddingProvider) -> EncodedPromptDB:
    """Encode every prompt, positives first, keeping input order within each polarity."""
    if not provider.dim > 0:
        raise ValueError("provider dimensionality must be positive")
    vecs, pols, texts = [], [], []
    for pol, items in ((Polarity.POSITIVE, prompts.positive), (Polarity.NEGATIVE, prompts.negative)):
        for text in items:
            try:
                v = np.asarray(provider.encode(text), dtype=np.float64)
            except Exception as exc:
                raise RuntimeError(f"embedding provider failed on prompt {text!r}: {exc}") from exc
            if v.shape != (provider.dim,):
                raise RuntimeError(f"embedding provider returned shape {v.shape} for prompt {text!r}")
            if abs(np.linalg.norm(v) - 1.0) > 1e-9:
                v = quantize_unit(v)
            vecs.append(v)
            pols.append(pol)
            texts.append(text)
    return EncodedPromptDB(np.array(vecs).reshape(len(vecs), provider.dim), tuple(pols), tuple(texts))


# The prompt families used for the simulated rover. Curly slots and bars follow
# the grammar above; see :func:`load_prompt_set`.
NAVIGABILITY_PROMPTS = """\
[positive]
A photo of a flat|open|wide|clear floor|ground|hallway
[templates]
A {} photo of a {} {}
[descriptions]
clear
[states]
clean|empty
[objects]
floor|corridor

[negative]
A photo of a large|way-blocking object|item
A photo with no context|texture|information
[templates]
A {} photo of a {} {}
[descriptions]
cropped|bad|incomplete
[states]
blocked|messy|cluttered
[objects]
scene|space
"""

TARGET_PROMPTS = """\
[positive]
[templates]
A photo of a {} {}
[states]
brown|toy
[objects]
bear|teddy bear

[negative]
A photo of an unknown item|scene|object
"""
