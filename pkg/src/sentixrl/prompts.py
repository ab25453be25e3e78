"""Prompt assembly for the generator, discriminator, and deduction calls.

Every prompt is assembled from four ordered segments: the task instruction,
the dialogue history window, the allowed-label constraint, and optional
deduction notes, followed by the target utterance. Templates are external
text files with named slots so the exact wording is a versioned artifact
rather than a code constant.
"""

from __future__ import annotations

import re
from collections.abc import Mapping
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from .backend import Backend, BackendRequest, CallTag, Message
from .corpus import (
    DEDUCTION_FIELD_CAP,
    DEDUCTION_LIST_CAP,
    EmotionalDeduction,
    HistoryWindow,
)
from .errors import SentixrlError
from .labels import LabelDomain

__all__ = [
    "EmotionalDeduction",
    "Instruction",
    "PromptBundle",
    "PromptTemplate",
    "TemplateSet",
    "render_generator_prompt",
    "render_discriminator_prompt",
    "request_deduction",
    "DEFAULT_INSTRUCTION",
    "EMPTY_HISTORY_MARKER",
]

GENERATOR = "generator"
DISCRIMINATOR = "discriminator"

EMPTY_HISTORY_MARKER = "(no prior dialogue)"
UNSPECIFIED = "(unspecified)"

TEMPLATE_SLOTS = frozenset(
    {"instruction", "history", "labels", "deduction", "target", "prior_response"}
)
_SLOT_RE = re.compile(r"\{([a-zA-Z_][a-zA-Z0-9_]*)\}")


class TemplateError(SentixrlError):
    """A template file references a slot that does not exist."""


class EmptyTarget(SentixrlError):
    """The target utterance text is empty."""


class MissingResponse(SentixrlError):
    """A discriminator prompt was requested without a generator response."""


@dataclass(frozen=True)
class PromptTemplate:
    """A named text template with `{slot}` placeholders.

    Unknown slot names are rejected at construction so typos fail at load
    time, not mid-run.
    """

    name: str
    body: str

    def __post_init__(self) -> None:
        if not self.body.strip():
            raise TemplateError(f"template {self.name!r} is empty")
        unknown = {m.group(1) for m in _SLOT_RE.finditer(self.body)} - TEMPLATE_SLOTS
        if unknown:
            raise TemplateError(
                f"template {self.name!r} has unknown slots {sorted(unknown)}; "
                f"allowed: {sorted(TEMPLATE_SLOTS)}"
            )

    def render(self, values: Mapping[str, str]) -> str:
        text = _SLOT_RE.sub(lambda m: values.get(m.group(1), ""), self.body)
        # Slots that expand to nothing leave blank runs behind; collapse them
        # so optional segments disappear cleanly.
        text = re.sub(r"\n{3,}", "\n\n", text)
        return text.strip() + "\n"


@dataclass(frozen=True)
class TemplateSet:
    generator: PromptTemplate
    discriminator: PromptTemplate
    deduction: PromptTemplate

    @classmethod
    def default(cls) -> "TemplateSet":
        """The templates shipped inside the package."""
        base = resources.files("sentixrl").joinpath("templates")
        return cls(
            generator=PromptTemplate(
                "generator", base.joinpath("generator.txt").read_text(encoding="utf-8")
            ),
            discriminator=PromptTemplate(
                "discriminator",
                base.joinpath("discriminator.txt").read_text(encoding="utf-8"),
            ),
            deduction=PromptTemplate(
                "deduction", base.joinpath("deduction.txt").read_text(encoding="utf-8")
            ),
        )

    @classmethod
    def from_dir(cls, path: str | Path) -> "TemplateSet":
        """Load generator.txt, discriminator.txt, deduction.txt from a directory."""
        path = Path(path)
        templates = {}
        for name in ("generator", "discriminator", "deduction"):
            file = path / f"{name}.txt"
            if not file.is_file():
                raise TemplateError(f"missing template file: {file}")
            templates[name] = PromptTemplate(name, file.read_text(encoding="utf-8"))
        return cls(**templates)


@dataclass(frozen=True)
class Instruction:
    """The task statement, including the required output format.

    Must contain a `{labels}` placeholder so the allowed labels can be
    spliced into the statement itself.
    """

    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise TemplateError("instruction text is empty")
        if "{labels}" not in self.text:
            raise TemplateError("instruction must contain a {labels} placeholder")


DEFAULT_INSTRUCTION = Instruction(
    "Classify the emotion expressed by the speaker of the target utterance, "
    "using the dialogue history and any deduction notes as context. "
    "Reply with exactly one label from: {labels}."
)


@dataclass(frozen=True)
class PromptBundle:
    """One fully rendered prompt plus the structured fields it came from."""

    instruction: Instruction
    history: HistoryWindow
    label_constraint: LabelDomain
    deduction: EmotionalDeduction | None
    target_text: str
    role: str
    text: str
    prior_response: str | None = None

    def __post_init__(self) -> None:
        if self.role not in (GENERATOR, DISCRIMINATOR):
            raise ValueError(f"unknown role {self.role!r}")
        if self.role == DISCRIMINATOR and not self.prior_response:
            raise MissingResponse("discriminator bundle needs a prior response")


def format_history(hw: HistoryWindow) -> str:
    if not hw.turns:
        return EMPTY_HISTORY_MARKER
    return "\n".join(f"{speaker}: {text}" for speaker, text in hw.turns)


def format_labels(dom: LabelDomain) -> str:
    return ", ".join(dom.labels)


def format_deduction(ded: EmotionalDeduction | None) -> str:
    """Expand deduction notes into a complete prompt section, or nothing."""
    if ded is None:
        return ""
    persons = ", ".join(ded.persons) if ded.persons else UNSPECIFIED
    relations = ", ".join(ded.relations) if ded.relations else UNSPECIFIED
    scene = ded.scene if ded.scene else UNSPECIFIED
    return (
        "### Deduction notes\n"
        f"Scene: {scene}\n"
        f"Persons: {persons}\n"
        f"Relations: {relations}"
    )


def _slot_values(
    instr: Instruction,
    hw: HistoryWindow,
    dom: LabelDomain,
    ded: EmotionalDeduction | None,
    target: str,
    prior_response: str = "",
) -> dict[str, str]:
    labels = format_labels(dom)
    return {
        "instruction": instr.text.replace("{labels}", labels),
        "history": format_history(hw),
        "labels": labels,
        "deduction": format_deduction(ded),
        "target": target,
        "prior_response": prior_response,
    }


def render_generator_prompt(
    instr: Instruction,
    hw: HistoryWindow,
    dom: LabelDomain,
    ded: EmotionalDeduction | None,
    target: str,
    templates: TemplateSet | None = None,
) -> PromptBundle:
    """Assemble the generator prompt for one target utterance.

    Rendering is a pure function of its arguments: same inputs, byte-equal
    output. The label constraint enumerates the domain verbatim in domain
    order.
    """
    if not target.strip():
        raise EmptyTarget("target utterance text is empty")
    templates = templates or TemplateSet.default()
    text = templates.generator.render(_slot_values(instr, hw, dom, ded, target))
    return PromptBundle(
        instruction=instr,
        history=hw,
        label_constraint=dom,
        deduction=ded,
        target_text=target,
        role=GENERATOR,
        text=text,
    )


def render_discriminator_prompt(
    base: PromptBundle,
    generator_response: str,
    templates: TemplateSet | None = None,
) -> PromptBundle:
    """Flip a generator bundle into its verdict (discriminator) form.

    The instruction, history, label constraint, and deduction segments are
    carried over unchanged; the generator's response is embedded and the
    verdict wording asks for ACCEPT/REJECT plus an explanation.
    """
    if base.role != GENERATOR:
        raise MissingResponse("base bundle must be a generator prompt")
    if not generator_response.strip():
        raise MissingResponse("generator response is empty")
    templates = templates or TemplateSet.default()
    values = _slot_values(
        base.instruction,
        base.history,
        base.label_constraint,
        base.deduction,
        base.target_text,
        prior_response=generator_response,
    )
    text = templates.discriminator.render(values)
    return replace(
        base, role=DISCRIMINATOR, text=text, prior_response=generator_response
    )


_DEDUCTION_TAGS = {"scene": "SCENE", "persons": "PERSONS", "relations": "RELATIONS"}
_LIST_SPLIT_RE = re.compile(r"[,，、;；]")


def _clip(text: str) -> str:
    return text[:DEDUCTION_FIELD_CAP]


def _split_list(text: str) -> tuple[str, ...]:
    items = tuple(
        _clip(part.strip()) for part in _LIST_SPLIT_RE.split(text) if part.strip()
    )
    return items[:DEDUCTION_LIST_CAP]


def parse_deduction_response(text: str) -> EmotionalDeduction:
    """Extract SCENE/PERSONS/RELATIONS sections from a model response.

    Missing sections yield empty fields. When no section tag is present at
    all, the result is empty with the warning flag set; a parse problem
    never raises.
    """
    found: dict[str, str] = {}
    for line in text.splitlines():
        stripped = line.strip()
        for field_name, tag in _DEDUCTION_TAGS.items():
            prefix = tag + ":"
            if stripped.upper().startswith(prefix) and field_name not in found:
                found[field_name] = stripped[len(prefix):].strip()
    if not found:
        return EmotionalDeduction(warning=True)
    return EmotionalDeduction(
        scene=_clip(found.get("scene", "")),
        persons=_split_list(found.get("persons", "")),
        relations=_split_list(found.get("relations", "")),
    )


def request_deduction(
    backend: Backend,
    hw: HistoryWindow,
    target: str,
    tag: CallTag = ("deduction", 0, "deduction"),
    templates: TemplateSet | None = None,
    temperature: float = 0.0,
    max_tokens: int = 256,
) -> EmotionalDeduction:
    """Ask the backend to infer scene/persons/relations for one utterance.

    Issues exactly one call. Backend errors propagate; unparseable replies
    degrade to an empty deduction with the warning flag set.
    """
    if not target.strip():
        raise EmptyTarget("target utterance text is empty")
    templates = templates or TemplateSet.default()
    values = {
        "instruction": "",
        "history": format_history(hw),
        "labels": "",
        "deduction": "",
        "target": target,
        "prior_response": "",
    }
    prompt = templates.deduction.render(values)
    request = BackendRequest(
        messages=(Message("user", prompt),),
        tag=tag,
        temperature=temperature,
        max_tokens=max_tokens,
    )
    response = backend.complete(request)
    return parse_deduction_response(response.content)
