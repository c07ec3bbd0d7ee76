"""Recover mark mentions from model answers and bind them to regions.

The parser runs a cascade of grammars from strict to lenient, and a
later pass may only add marks the earlier passes did not find:

  1. per-line colon grammar, both directions: "mark: payload" when the
     line leads with marks, otherwise alternating "payload: marks"
     segments which must tile the whole line (so "I see: 2 dogs" never
     counts as an answer for mark 2);
  2. parenthesized marks: "Sliced Fruits (3): ..." item lists;
  3. enumerations: "1. Person 2. Person ...";
  4. lenient scan: a mark token with a nearby cue word such as
     'labeled "3"', "element a", "item 1", or "#4".

Tokens that are not mark texts of the manifest are never mentions, so
free-standing numbers ("2 to 5 minutes") stay inert.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from .masks import RegionSet
from .render import Manifest


class ParseBindError(ValueError):
    """Raised when mentions cannot be bound against a manifest/region set."""


@dataclass
class MarkMention:
    mark_text: str
    payload: str
    span: Tuple[int, int]


@dataclass
class Triplet:
    region_id: int
    mark_text: str
    payload: str


@dataclass
class GroundedAnswer:
    raw: str
    mentions: List[MarkMention]
    triplets: List[Triplet]
    dropped_marks: int = 0


_CUE = re.compile(
    r"(?i)(?<![a-z])(labell?ed|labell?ing|labels?|elements?|ids?|numbers?|regions?|items?|marks?|squares?)(?![a-z])|#"
)
_COPULA_HEAD = re.compile(
    r"(?i)^(appears? to be|seems? to be|looks? like|corresponds? to|would be|is|are|was|were)\s+"
)
_COPULA_TAIL = re.compile(r"(?i)\s+(is|are|was|were)$")
_SENTENCE_BREAK = re.compile(r"[.!?\n]")
_ENUM = re.compile(r"(?<![\w.])(\d+)\.(?!\d)")
_QUOTED = re.compile(r"[\"“]([^\"“”]+)[\"”]")


def _token_pattern(mark: str) -> str:
    esc = re.escape(mark)
    if mark.isdigit():
        # reject word-adjacent and decimal contexts: a2, 3.5, 0.27
        return rf"(?<![\w.]){esc}(?!\w|\.\d)"
    return rf"(?<![A-Za-z]){esc}(?![A-Za-z])"


class _Tokens:
    """Compiled matchers for one manifest's mark texts."""

    def __init__(self, marks: Sequence[str]):
        self.marks = [m for m in marks if m]
        if self.marks:
            ordered = sorted(self.marks, key=len, reverse=True)
            alt = "|".join(_token_pattern(m) for m in ordered)
            self.scan = re.compile(alt)
            self.list_match = re.compile(
                rf"\s*(?:{alt})(?:\s*,\s*(?:{alt}))*(?:\s*,?\s*(?:and|&)\s+(?:{alt}))?"
            )
        else:
            self.scan = None
            self.list_match = None

    def tokens_in(self, text: str, offset: int = 0) -> List[Tuple[str, int, int]]:
        if self.scan is None:
            return []
        return [
            (m.group(0), offset + m.start(), offset + m.end())
            for m in self.scan.finditer(text)
        ]


def _marks_of(manifest: Union[Manifest, Iterable[str]]) -> List[str]:
    if isinstance(manifest, Manifest):
        return manifest.mark_texts()
    return list(manifest)


def _strip_tail_copula(payload: str) -> str:
    return _COPULA_TAIL.sub("", payload.strip())


def _pass_colon_lines(text: str, tok: _Tokens) -> List[MarkMention]:
    out: List[MarkMention] = []
    offset = 0
    for line in text.split("\n"):
        out.extend(_parse_colon_line(line, offset, tok))
        offset += len(line) + 1
    return out


def _parse_colon_line(line: str, offset: int, tok: _Tokens) -> List[MarkMention]:
    if tok.list_match is None or ":" not in line:
        return []

    # leading marks then colon: "3: plate", "2, 5: people"
    lead = tok.list_match.match(line, 0)
    if lead is not None:
        after = line[lead.end() :]
        m = re.match(r"\s*:\s*", after)
        if m is not None:
            payload = after[m.end() :].strip()
            return [
                MarkMention(mark, payload, (s, e))
                for mark, s, e in tok.tokens_in(line[: lead.end()], offset)
            ]

    # alternating "payload: marks" segments that must tile the line
    out: List[MarkMention] = []
    pos = 0
    last_boundary = 0
    matched_any = False
    while True:
        colon = line.find(":", pos)
        if colon == -1:
            break
        m = tok.list_match.match(line, colon + 1)
        if m is None or not line[colon + 1 : m.end()].strip():
            # prologue colon ("I observe the following items:")
            last_boundary = colon + 1
            pos = colon + 1
            continue
        payload = _strip_tail_copula(line[last_boundary:colon])
        for mark, s, e in tok.tokens_in(line[colon + 1 : m.end()], offset + colon + 1):
            out.append(MarkMention(mark, payload, (s, e)))
        matched_any = True
        last_boundary = m.end()
        pos = m.end()
    if not matched_any:
        return []
    tail = line[last_boundary:]
    if re.fullmatch(r"[\s.;!?)\"']*", tail) is None:
        # the line wanders off after the marks; treat it as prose
        return []
    return out


def _pass_parenthesized(text: str, tok: _Tokens) -> List[MarkMention]:
    if tok.scan is None:
        return []
    out = []
    for m in re.finditer(r"\(\s*([^()\n]+?)\s*\)", text):
        inner = m.group(1)
        hit = tok.scan.fullmatch(inner)
        if hit is None:
            continue
        head = text[: m.start()]
        nl = head.rfind("\n")
        seg = head[nl + 1 :]
        cut = max(seg.rfind(c) for c in ".,:;!?")
        payload = seg[cut + 1 :].strip() if cut >= 0 else seg.strip()
        start = m.start(1) + hit.start()
        out.append(MarkMention(inner.strip(), payload, (start, start + len(hit.group(0)))))
    return out


def _pass_enumeration(text: str, tok: _Tokens) -> List[MarkMention]:
    matches = list(_ENUM.finditer(text))
    out = []
    mark_set = set(tok.marks)
    for i, m in enumerate(matches):
        if m.group(1) not in mark_set:
            continue
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        nl = text.find("\n", m.end(), end)
        if nl != -1:
            end = nl
        payload = text[m.end() : end].strip()
        out.append(MarkMention(m.group(1), payload, (m.start(1), m.end(1))))
    return out


def _sentence_bounds(text: str, pos: int) -> Tuple[int, int]:
    start = 0
    for m in _SENTENCE_BREAK.finditer(text, 0, pos):
        start = m.end()
    m = _SENTENCE_BREAK.search(text, pos)
    end = m.start() if m is not None else len(text)
    return start, end


def _lenient_payload(text: str, s: int, e: int) -> str:
    sent_start, sent_end = _sentence_bounds(text, s)
    before = text[sent_start:s]
    quoted = [q for q in _QUOTED.finditer(before)]
    if quoted:
        return quoted[-1].group(1).strip()
    after = text[e:sent_end].lstrip("\"'“”)] \t")
    after = _COPULA_HEAD.sub("", after)
    return after.strip()


def _pass_lenient(text: str, tok: _Tokens) -> List[MarkMention]:
    if tok.scan is None:
        return []
    cues = [(m.start(), m.end()) for m in _CUE.finditer(text)]
    out = []
    covered_until = -1
    for mark, s, e in tok.tokens_in(text):
        window = 2 if (len(mark) == 1 and mark.isalpha()) else 12
        gated = any(ce <= s and s - ce <= window for _, ce in cues)
        # list continuation: ", 7, and 11" after a gated mark
        if not gated and covered_until >= 0:
            gap = text[covered_until:s]
            if re.fullmatch(r"\s*(?:,|,?\s*(?:and|&))?\s*", gap) and gap != "":
                gated = True
        if not gated:
            continue
        out.append(MarkMention(mark, _lenient_payload(text, s, e), (s, e)))
        covered_until = e
    return out


def parse_response(
    text: str,
    manifest: Union[Manifest, Iterable[str]],
    task=None,
) -> List[MarkMention]:
    """Extract mark mentions from a response.

    Accepts a Manifest or a bare iterable of mark texts. Returns at most
    one mention per mark (first find wins); an empty list is a valid
    outcome, never an error.
    """
    del task  # the cascade is shared by every task
    tok = _Tokens(_marks_of(manifest))
    mentions: List[MarkMention] = []
    seen = set()
    for cascade_pass in (_pass_colon_lines, _pass_parenthesized, _pass_enumeration, _pass_lenient):
        for m in cascade_pass(text, tok):
            if m.mark_text in seen:
                continue
            seen.add(m.mark_text)
            mentions.append(m)
    mentions.sort(key=lambda m: m.span)
    return mentions


def bind_triplets(
    mentions: Sequence[MarkMention],
    manifest: Manifest,
    rs: RegionSet,
    raw: str = "",
) -> GroundedAnswer:
    """Join mentions with the manifest into region/mark/payload triplets.

    Mentions whose mark is not in the manifest do not become triplets;
    they are tallied in dropped_marks.
    """
    region_ids = {r.id for r in rs.regions}
    by_mark = {}
    for e in manifest.entries:
        if e.region_id not in region_ids:
            raise ParseBindError(
                f"manifest region {e.region_id} is not present in the region set"
            )
        by_mark[e.mark_text] = e.region_id
    triplets = []
    dropped = 0
    for m in mentions:
        if m.mark_text in by_mark:
            triplets.append(Triplet(by_mark[m.mark_text], m.mark_text, m.payload))
        else:
            dropped += 1
    return GroundedAnswer(raw=raw, mentions=list(mentions), triplets=triplets, dropped_marks=dropped)


def grounded_to_dict(ga: GroundedAnswer) -> dict:
    return {
        "raw": ga.raw,
        "mentions": [
            {"mark_text": m.mark_text, "payload": m.payload, "span": list(m.span)}
            for m in ga.mentions
        ],
        "triplets": [
            {"region_id": t.region_id, "mark_text": t.mark_text, "payload": t.payload}
            for t in ga.triplets
        ],
        "dropped_marks": ga.dropped_marks,
    }


def grounded_from_dict(doc: dict) -> GroundedAnswer:
    return GroundedAnswer(
        raw=doc["raw"],
        mentions=[
            MarkMention(m["mark_text"], m["payload"], (m["span"][0], m["span"][1]))
            for m in doc["mentions"]
        ],
        triplets=[
            Triplet(t["region_id"], t["mark_text"], t["payload"]) for t in doc["triplets"]
        ],
        dropped_marks=doc.get("dropped_marks", 0),
    )
