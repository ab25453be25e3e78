import re

import pytest

from conftest import DATA_DIR
from sentixrl.backend import BackendRequest, BackendResponse, MockBackend
from sentixrl.corpus import EmotionalDeduction, HistoryWindow
from sentixrl.prompts import (
    DEFAULT_INSTRUCTION,
    EMPTY_HISTORY_MARKER,
    EmptyTarget,
    Instruction,
    MissingResponse,
    PromptTemplate,
    TemplateError,
    TemplateSet,
    parse_deduction_response,
    render_discriminator_prompt,
    render_generator_prompt,
    request_deduction,
)

HW = HistoryWindow(
    turns=(
        ("Alice", "You missed the rehearsal again."),
        ("Bob", "I know. Traffic was terrible."),
    ),
    m=5,
)
DED = EmotionalDeduction(
    scene="backstage before a performance",
    persons=("Alice", "Bob"),
    relations=("bandmates",),
)
TARGET = "This is the third time this month, Bob!"


def constraint_section(text: str) -> str:
    match = re.search(r"### Allowed labels\n(.*?)(?:\n###|\Z)", text, re.DOTALL)
    assert match, "no allowed-labels section found"
    return match.group(1)


class TestGeneratorPrompt:
    def test_deterministic(self, unified):
        a = render_generator_prompt(DEFAULT_INSTRUCTION, HW, unified, DED, TARGET)
        b = render_generator_prompt(DEFAULT_INSTRUCTION, HW, unified, DED, TARGET)
        assert a.text == b.text

    def test_segment_order(self, unified):
        text = render_generator_prompt(DEFAULT_INSTRUCTION, HW, unified, DED, TARGET).text
        positions = [
            text.index("Classify the emotion"),
            text.index("### Dialogue history"),
            text.index("### Allowed labels"),
            text.index("### Deduction notes"),
            text.index("### Target utterance"),
        ]
        assert positions == sorted(positions)

    def test_empty_history_and_no_deduction(self, unified):
        bundle = render_generator_prompt(
            DEFAULT_INSTRUCTION, HistoryWindow(turns=(), m=5), unified, None, TARGET
        )
        assert EMPTY_HISTORY_MARKER in bundle.text
        assert "### Deduction notes" not in bundle.text
        assert "\n\n\n" not in bundle.text

    def test_label_list_matches_domain_order(self, unified):
        text = render_generator_prompt(DEFAULT_INSTRUCTION, HW, unified, None, TARGET).text
        assert constraint_section(text).strip() == ", ".join(unified.labels)

    def test_every_label_exactly_once_in_constraint_section(self, unified):
        text = render_generator_prompt(DEFAULT_INSTRUCTION, HW, unified, DED, TARGET).text
        section = constraint_section(text)
        for label in unified.labels:
            assert len(re.findall(rf"\b{label}\b", section)) == 1

    def test_empty_target_rejected(self, unified):
        with pytest.raises(EmptyTarget):
            render_generator_prompt(DEFAULT_INSTRUCTION, HW, unified, None, "  ")

    def test_golden(self, unified):
        text = render_generator_prompt(DEFAULT_INSTRUCTION, HW, unified, DED, TARGET).text
        golden = (DATA_DIR / "golden_generator_prompt.txt").read_text(encoding="utf-8")
        assert text == golden


class TestDiscriminatorPrompt:
    def test_embeds_verdict_instruction_and_response(self, unified):
        base = render_generator_prompt(DEFAULT_INSTRUCTION, HW, unified, DED, TARGET)
        disc = render_discriminator_prompt(base, "Label: anger.")
        assert "ACCEPT" in disc.text and "REJECT" in disc.text
        assert "Label: anger." in disc.text
        assert disc.role == "discriminator"
        assert disc.prior_response == "Label: anger."

    def test_preserves_base_segments(self, unified):
        base = render_generator_prompt(DEFAULT_INSTRUCTION, HW, unified, DED, TARGET)
        disc = render_discriminator_prompt(base, "Label: anger.")
        for segment in (
            "Alice: You missed the rehearsal again.",
            ", ".join(unified.labels),
            "Scene: backstage before a performance",
            TARGET,
        ):
            assert segment in disc.text
        assert disc.instruction == base.instruction
        assert disc.history == base.history
        assert disc.deduction == base.deduction

    def test_base_must_be_generator(self, unified):
        base = render_generator_prompt(DEFAULT_INSTRUCTION, HW, unified, None, TARGET)
        disc = render_discriminator_prompt(base, "anger")
        with pytest.raises(MissingResponse):
            render_discriminator_prompt(disc, "again")

    def test_empty_response_rejected(self, unified):
        base = render_generator_prompt(DEFAULT_INSTRUCTION, HW, unified, None, TARGET)
        with pytest.raises(MissingResponse):
            render_discriminator_prompt(base, "   ")

    def test_golden(self, unified):
        base = render_generator_prompt(DEFAULT_INSTRUCTION, HW, unified, DED, TARGET)
        disc = render_discriminator_prompt(
            base, "The speaker is frustrated and scolding. Label: anger."
        )
        golden = (DATA_DIR / "golden_discriminator_prompt.txt").read_text(encoding="utf-8")
        assert disc.text == golden


class TestTemplates:
    def test_unknown_slot_rejected_at_load(self):
        with pytest.raises(TemplateError):
            PromptTemplate("bad", "hello {nope}")

    def test_literal_braces_without_slot_syntax_pass(self):
        # only {identifier} tokens are slots
        PromptTemplate("ok", "a {{ b } c {target}")

    def test_from_dir_requires_all_files(self, tmp_path):
        (tmp_path / "generator.txt").write_text("{instruction} {history} {labels} {target}")
        with pytest.raises(TemplateError):
            TemplateSet.from_dir(tmp_path)

    def test_from_dir_roundtrip(self, tmp_path, unified):
        for name in ("generator", "discriminator", "deduction"):
            (tmp_path / f"{name}.txt").write_text(
                "{instruction}\nH: {history}\nL: {labels}\n{deduction}\nT: {target}\nP: {prior_response}"
            )
        ts = TemplateSet.from_dir(tmp_path)
        bundle = render_generator_prompt(
            DEFAULT_INSTRUCTION, HW, unified, None, TARGET, templates=ts
        )
        assert "T: " + TARGET in bundle.text

    def test_instruction_requires_labels_placeholder(self):
        with pytest.raises(TemplateError):
            Instruction("Classify the emotion.")


class TestDeduction:
    def test_tagged_response(self, unified):
        backend = MockBackend(default="SCENE: cafe\nPERSONS: A,B\nRELATIONS: friends")
        ded = request_deduction(backend, HW, TARGET)
        assert ded.scene == "cafe"
        assert ded.persons == ("A", "B")
        assert ded.relations == ("friends",)
        assert not ded.warning

    def test_free_text_degrades_with_warning(self):
        ded = parse_deduction_response("no structure at all here")
        assert ded.empty and ded.warning

    def test_partial_tags(self):
        ded = parse_deduction_response("SCENE: office")
        assert ded.scene == "office"
        assert ded.persons == () and ded.relations == ()
        assert not ded.warning

    def test_case_insensitive_tags(self):
        ded = parse_deduction_response("scene: park\npersons: Ann")
        assert ded.scene == "park" and ded.persons == ("Ann",)

    def test_long_fields_clipped_not_raised(self):
        ded = parse_deduction_response("SCENE: " + "x" * 2000)
        assert len(ded.scene) == 500

    def test_one_backend_call_with_deduction_tag(self, unified):
        calls = []

        class Spy:
            def complete(self, req: BackendRequest) -> BackendResponse:
                calls.append(req)
                return BackendResponse("SCENE: here", 0.0, 200)

        request_deduction(Spy(), HW, TARGET, tag=("u1", 0, "deduction"))
        assert len(calls) == 1
        assert calls[0].tag == ("u1", 0, "deduction")
