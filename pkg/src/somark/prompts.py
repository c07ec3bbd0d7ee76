"""Prompt construction: per-task templates plus interleaved mark references.

Task templates live as text resources under somark/templates and can be
overridden wholesale with a directory of same-named files. Interleaved
prompts embed mark texts directly into free-form questions, e.g.
"What is in {A}?" with A bound to a region becomes "What is in 3?".
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .render import Manifest


class PromptError(ValueError):
    """Raised when task inputs do not match the requested task."""


class TaskKind(str, enum.Enum):
    OPEN_VOCAB_SEG = "open_vocab_seg"
    REFERRING_SEG = "referring_seg"
    REFERRING_COMPREHENSION = "referring_comprehension"
    PHRASE_GROUNDING = "phrase_grounding"
    VIDEO_OBJECT_SEG = "video_object_seg"
    FREE_CHAT = "free_chat"


# which template file serves which task; REC shares the referring wording
_TEMPLATE_FILES = {
    TaskKind.OPEN_VOCAB_SEG: "open_vocab.txt",
    TaskKind.REFERRING_SEG: "referring.txt",
    TaskKind.REFERRING_COMPREHENSION: "referring.txt",
    TaskKind.PHRASE_GROUNDING: "phrase_grounding.txt",
    TaskKind.VIDEO_OBJECT_SEG: "video_tracking.txt",
}

FORMAT_HINT = ' Answer with one line per item in the form "ID: name".'


@dataclass
class PromptSpec:
    """A ready-to-send user message."""

    task: TaskKind
    text: str
    referenced_marks: List[str] = field(default_factory=list)
    attachments: int = 1
    fresh_conversation: bool = True


class TemplateCatalog:
    """Versioned template text, either built in or from an override dir."""

    def __init__(self, texts: Dict[str, str], version: str):
        self.texts = texts
        self.version = version

    @classmethod
    def builtin(cls) -> "TemplateCatalog":
        pkg = resources.files("somark") / "templates"
        texts = {}
        for name in set(_TEMPLATE_FILES.values()):
            texts[name] = (pkg / name).read_text(encoding="utf-8")
        version = (pkg / "version.txt").read_text(encoding="utf-8").strip()
        return cls(texts, version)

    @classmethod
    def from_dir(cls, template_dir) -> "TemplateCatalog":
        base = cls.builtin()
        root = Path(template_dir)
        if not root.is_dir():
            raise PromptError(f"template directory not found: {root}")
        for name in list(base.texts):
            candidate = root / name
            if candidate.exists():
                base.texts[name] = candidate.read_text(encoding="utf-8")
        vfile = root / "version.txt"
        if vfile.exists():
            base.version = vfile.read_text(encoding="utf-8").strip()
        return base

    def get(self, task: TaskKind) -> str:
        try:
            return self.texts[_TEMPLATE_FILES[task]]
        except KeyError as exc:
            raise PromptError(f"no template for task {task}") from exc


_DEFAULT_CATALOG: Optional[TemplateCatalog] = None


def _catalog(catalog: Optional[TemplateCatalog]) -> TemplateCatalog:
    global _DEFAULT_CATALOG
    if catalog is not None:
        return catalog
    if _DEFAULT_CATALOG is None:
        _DEFAULT_CATALOG = TemplateCatalog.builtin()
    return _DEFAULT_CATALOG


def build_task_prompt(
    task: TaskKind,
    manifest: Manifest,
    inputs: dict,
    catalog: Optional[TemplateCatalog] = None,
    format_hint: bool = False,
) -> PromptSpec:
    """Fill the task's template with the given inputs.

    inputs by task: vocabulary (list of names) for OPEN_VOCAB_SEG;
    expressions (list) for REFERRING_SEG / REFERRING_COMPREHENSION;
    caption and phrases for PHRASE_GROUNDING; object_count for
    VIDEO_OBJECT_SEG (marks are taken from the manifest head);
    text for FREE_CHAT, passed through unchanged.

    format_hint appends an explicit "ID: name" answer-shape request;
    it is off by default so built prompts match the published wording.
    """
    if task == TaskKind.FREE_CHAT:
        text = inputs.get("text")
        if not isinstance(text, str) or not text:
            raise PromptError("free chat requires nonempty inputs['text']")
        return PromptSpec(task=task, text=text)

    template = _catalog(catalog).get(task)
    referenced: List[str] = []
    attachments = 1

    if task == TaskKind.OPEN_VOCAB_SEG:
        vocab = inputs.get("vocabulary")
        if not vocab:
            raise PromptError("open-vocabulary task requires a nonempty vocabulary")
        text = template.format(vocabulary=", ".join(vocab))
    elif task in (TaskKind.REFERRING_SEG, TaskKind.REFERRING_COMPREHENSION):
        expressions = inputs.get("expressions")
        if not expressions:
            raise PromptError("referring tasks require nonempty expressions")
        text = template.format(expressions="; ".join(expressions))
    elif task == TaskKind.PHRASE_GROUNDING:
        caption = inputs.get("caption")
        phrases = inputs.get("phrases")
        if not caption or not phrases:
            raise PromptError("phrase grounding requires a caption and phrases")
        text = template.format(caption=caption, phrases=", ".join(phrases))
    elif task == TaskKind.VIDEO_OBJECT_SEG:
        count = inputs.get("object_count")
        if not isinstance(count, int) or count < 1:
            raise PromptError("video tracking requires a positive object_count")
        marks = manifest.mark_texts()
        if count > len(marks):
            raise PromptError(
                f"object_count {count} exceeds the {len(marks)} marks in the manifest"
            )
        referenced = marks[:count]
        text = template.format(object_count=count, marks=",".join(referenced))
        attachments = 2
    else:  # pragma: no cover - enum is closed
        raise PromptError(f"unhandled task {task}")

    if format_hint:
        text += FORMAT_HINT
    return PromptSpec(
        task=task, text=text, referenced_marks=referenced, attachments=attachments
    )


_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


def interleave_marks(
    template: str, manifest: Manifest, bindings: Dict[str, int]
) -> PromptSpec:
    """Replace {NAME} placeholders with the bound regions' mark texts.

    Args:
        template: free text with {NAME} placeholders.
        manifest: the current mark legend.
        bindings: placeholder name -> region id.

    Returns:
        PromptSpec with referenced_marks listing each substituted mark
        once, in first-appearance order.
    """
    marks_by_region = {e.region_id: e.mark_text for e in manifest.entries}
    referenced: List[str] = []

    def sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in bindings:
            raise PromptError(f"unbound placeholder {{{name}}}")
        region_id = bindings[name]
        if region_id not in marks_by_region:
            raise PromptError(f"placeholder {{{name}}} bound to unknown region {region_id}")
        mark = marks_by_region[region_id]
        if mark not in referenced:
            referenced.append(mark)
        return mark

    text = _PLACEHOLDER.sub(sub, template)
    return PromptSpec(task=TaskKind.FREE_CHAT, text=text, referenced_marks=referenced)
