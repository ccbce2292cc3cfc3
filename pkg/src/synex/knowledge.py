"""Markdown knowledge packages and section-granular retrieval.

Knowledge lives as plain markdown files in a directory. Documents are split
at ATX headings of level <= 3 so that each retrieved chunk keeps a complete
piece of knowledge (a rule plus its conditions) instead of a bare sentence.
Retrieval is deterministic lexical scoring behind a pluggable scorer registry.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

MAX_SPLIT_LEVEL = 3
DEFAULT_RETRIEVAL_K = 3
DEFAULT_CHAR_BUDGET = 8000

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_HEADING_RE = re.compile(r"^(#{1,6})\s+(.*?)\s*#*\s*$")
_FENCE_RE = re.compile(r"^(```|~~~)")


class KnowledgeError(ValueError):
    pass


@dataclass(frozen=True)
class Section:
    """A contiguous chunk of one document under a heading chain.

    `heading_raw` is the verbatim heading line (with newline) so that
    concatenating heading_raw + body over all sections reconstructs the
    source document byte-for-byte.
    """

    doc_id: str
    heading_path: tuple[str, ...]
    body: str
    order: int
    heading_raw: str = ""

    @property
    def heading(self) -> str:
        return self.heading_path[-1] if self.heading_path else ""

    def render(self) -> str:
        return self.heading_raw + self.body


@dataclass(frozen=True)
class KnowledgeBase:
    sections: tuple[Section, ...]
    manifest: Mapping[str, tuple[str, str]]  # doc_id -> (path, sha256 digest)

    def digest(self) -> str:
        """Stable content hash over the whole base, for run manifests."""
        h = hashlib.sha256()
        for doc_id in sorted(self.manifest):
            h.update(doc_id.encode("utf-8"))
            h.update(self.manifest[doc_id][1].encode("ascii"))
        return h.hexdigest()


def split_sections(markdown: str, doc_id: str = "") -> list[Section]:
    """Split a markdown document at ATX headings of level <= 3.

    Text before the first heading becomes a preamble section with an empty
    heading path. Headings deeper than level 3 and headings inside fenced
    code blocks stay in the enclosing section's body.
    """
    lines = markdown.splitlines(keepends=True)
    sections: list[Section] = []
    path: list[tuple[int, str]] = []  # (level, title) stack
    body_parts: list[str] = []
    heading_raw = ""
    started = bool(lines)
    in_fence = False
    order = 0

    def flush() -> None:
        nonlocal order
        if not started:
            return
        sections.append(
            Section(
                doc_id=doc_id,
                heading_path=tuple(title for _, title in path),
                body="".join(body_parts),
                order=order,
                heading_raw=heading_raw,
            )
        )
        order += 1

    for line in lines:
        if _FENCE_RE.match(line):
            in_fence = not in_fence
        match = None if in_fence else _HEADING_RE.match(line)
        if match and len(match.group(1)) <= MAX_SPLIT_LEVEL:
            flush()
            level = len(match.group(1))
            while path and path[-1][0] >= level:
                path.pop()
            path.append((level, match.group(2)))
            heading_raw = line
            body_parts = []
            started = True
        else:
            body_parts.append(line)
    flush()
    # Drop an empty preamble (document starts directly with a heading).
    if sections and sections[0].heading_raw == "" and sections[0].body == "":
        sections = [
            Section(s.doc_id, s.heading_path, s.body, s.order - 1, s.heading_raw)
            for s in sections[1:]
        ]
    return sections


def reconstruct(sections: Sequence[Section]) -> str:
    """Inverse of split_sections for one document's sections in order."""
    return "".join(s.render() for s in sections)


def load_packages(dir: Path | str) -> KnowledgeBase:
    """Load every *.md file under a directory into a knowledge base.

    Ordering is deterministic: documents by relative path, sections by
    position. An empty directory yields an empty base.
    """
    root = Path(dir)
    if not root.is_dir():
        raise KnowledgeError(f"knowledge directory {root} does not exist")
    sections: list[Section] = []
    manifest: dict[str, tuple[str, str]] = {}
    for path in sorted(root.rglob("*.md")):
        doc_id = path.relative_to(root).as_posix()
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise KnowledgeError(f"unreadable knowledge file {path}: {exc}") from exc
        manifest[doc_id] = (str(path), hashlib.sha256(text.encode("utf-8")).hexdigest())
        sections.extend(split_sections(text, doc_id=doc_id))
    return KnowledgeBase(sections=tuple(sections), manifest=manifest)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def term_overlap_score(query: str, section: Section) -> float:
    """Shared lowercased alphanumeric tokens, normalized by section length."""
    section_tokens = tokenize(section.heading + " " + section.body)
    if not section_tokens:
        return 0.0
    shared = set(tokenize(query)) & set(section_tokens)
    return len(shared) / len(section_tokens)


SCORERS: dict[str, Callable[[str, Section], float]] = {
    "term_overlap": term_overlap_score,
}


def retrieve(kb: KnowledgeBase, query: str, k: int, scorer: str = "term_overlap") -> list[Section]:
    """Top-k sections by non-increasing score; ties break by (doc_id, order)."""
    if k < 0:
        raise KnowledgeError("k must be non-negative")
    try:
        score = SCORERS[scorer]
    except KeyError:
        raise KnowledgeError(f"unknown scorer {scorer!r}") from None
    if k == 0:
        return []
    ranked = sorted(
        kb.sections,
        key=lambda s: (-score(query, s), s.doc_id, s.order),
    )
    return ranked[:k]


def clip_to_budget(sections: Sequence[Section], budget: int = DEFAULT_CHAR_BUDGET) -> list[Section]:
    """Keep the highest-ranked prefix whose rendered size fits the budget."""
    kept: list[Section] = []
    used = 0
    for section in sections:
        size = len(section.render())
        if kept and used + size > budget:
            break
        if not kept and size > budget:
            break
        kept.append(section)
        used += size
    return kept


def format_sections(sections: Sequence[Section]) -> str:
    """Deterministic text block for a prompt slot; '(none)' when empty."""
    if not sections:
        return "(none)"
    parts = []
    for section in sections:
        title = " / ".join(section.heading_path) if section.heading_path else section.doc_id
        parts.append(f"[{title}]\n{section.body.strip()}" if title else section.body.strip())
    return "\n\n".join(parts)
