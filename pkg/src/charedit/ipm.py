"""Instruction parsing: dialogue turn -> edit instructions + feedback.

Each user turn becomes a ParsedTurn: feedback text, zero or more edit
instructions (attribute, prompt, strength or delta), and suggestions.
Parsing goes through a pluggable text backend (an LLM treated strictly as
an untrusted structured-output generator behind validation, with bounded
retries) and falls back to a deterministic rule grammar, so the engine is
fully usable offline.

The per-session attribute memory bank stores each attribute's current
prompt and strength.  Delta edits ("a bit more") resolve against it, which
is what makes multi-round refinement of one attribute possible.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from importlib import resources

from .localizer import LabelSet, lexicon_lookup, tokenize


class ParseError(ValueError):
    """Raised when a backend response cannot be parsed into a ParsedTurn."""


def _load_data(name: str) -> dict:
    return json.loads(resources.files("charedit.data").joinpath(name).read_text())


GRAMMAR = _load_data("fallback_grammar.json")
PROMPT_PACK = _load_data("prompt_pack.json")

HISTORY_TURNS_KEPT = 10
MAX_PARSE_RETRIES = 2


def clamp01(v: float) -> float:
    return min(max(float(v), 0.0), 1.0)


@dataclass
class AttributeState:
    """Editing status of one attribute: current prompt, strength, history."""

    attribute_key: str
    prompt: str
    strength: float
    last_round: int
    last_seq: int  # global edit sequence number, for recency resolution
    history: list[tuple[int, str, float]] = field(default_factory=list)  # (round, prompt, strength)

    def to_dict(self) -> dict:
        return {
            "attribute_key": self.attribute_key,
            "prompt": self.prompt,
            "strength": self.strength,
            "last_round": self.last_round,
            "last_seq": self.last_seq,
            "history": [[r, p, s] for r, p, s in self.history],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AttributeState":
        return cls(
            attribute_key=doc["attribute_key"],
            prompt=doc["prompt"],
            strength=doc["strength"],
            last_round=doc["last_round"],
            last_seq=doc["last_seq"],
            history=[(r, p, s) for r, p, s in doc["history"]],
        )


@dataclass
class MemoryBank:
    """Per-session attribute editing state, updated once per turn."""

    entries: dict[str, AttributeState] = field(default_factory=dict)
    round_counter: int = 0
    edit_counter: int = 0

    def most_recent(self) -> AttributeState | None:
        if not self.entries:
            return None
        return max(self.entries.values(), key=lambda st: st.last_seq)

    def copy(self) -> "MemoryBank":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        return {
            "entries": {k: st.to_dict() for k, st in sorted(self.entries.items())},
            "round_counter": self.round_counter,
            "edit_counter": self.edit_counter,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MemoryBank":
        return cls(
            entries={k: AttributeState.from_dict(v) for k, v in doc["entries"].items()},
            round_counter=doc["round_counter"],
            edit_counter=doc["edit_counter"],
        )


@dataclass
class EditInstruction:
    attribute_key: str
    prompt: str | None  # None -> resolve from the bank
    mode: str  # "absolute" | "delta"
    strength: float | None = None  # absolute mode
    delta: float | None = None  # delta mode, in [-1, 1]

    def to_dict(self) -> dict:
        return {
            "attribute_key": self.attribute_key,
            "prompt": self.prompt,
            "mode": self.mode,
            "strength": self.strength,
            "delta": self.delta,
        }


@dataclass
class ResolvedEdit:
    """An edit after bank resolution: absolute strength, concrete prompt."""

    attribute_key: str
    prompt: str
    strength: float

    def to_dict(self) -> dict:
        return {"attribute_key": self.attribute_key, "prompt": self.prompt, "strength": self.strength}


@dataclass
class ParsedTurn:
    feedback: str
    edits: list[EditInstruction] = field(default_factory=list)
    suggestions: list[str] = field(default_factory=list)
    parser_source: str = "fallback"  # "llm" | "fallback"
    reset_all: bool = False  # extension: "reset everything" clears the bank

    def to_dict(self) -> dict:
        return {
            "feedback": self.feedback,
            "edits": [e.to_dict() for e in self.edits],
            "suggestions": self.suggestions,
            "parser_source": self.parser_source,
            "reset_all": self.reset_all,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ParsedTurn":
        return cls(
            feedback=doc["feedback"],
            edits=[EditInstruction(**e) for e in doc["edits"]],
            suggestions=list(doc["suggestions"]),
            parser_source=doc["parser_source"],
            reset_all=doc.get("reset_all", False),
        )


# -- request document ---------------------------------------------------------


def build_llm_request(
    user_text: str,
    history: list[tuple[str, str]],
    bank: MemoryBank,
    label_set: LabelSet,
) -> dict:
    """Deterministic request document for a parsing backend.

    Carries the versioned system instructions, the serialized memory bank
    (or an explicit empty-state marker), the last 10 turns of history
    (older turns dropped first), the attribute vocabulary, and the user
    text.
    """
    if bank.entries:
        memory = {
            key: {"prompt": st.prompt, "strength": st.strength, "last_round": st.last_round}
            for key, st in sorted(bank.entries.items())
        }
    else:
        memory = {"state": "empty"}
    return {
        "version": PROMPT_PACK["version"],
        "system": PROMPT_PACK["system"],
        "examples": PROMPT_PACK["examples"],
        "attributes": list(label_set.labels),
        "memory": memory,
        "history": [{"speaker": speaker, "text": text} for speaker, text in history[-HISTORY_TURNS_KEPT:]],
        "user_text": user_text,
    }


# -- backend response parsing ---------------------------------------------------


def _extract_json_object(raw: str) -> dict:
    try:
        doc = json.loads(raw)
        if isinstance(doc, dict):
            return doc
    except json.JSONDecodeError:
        pass
    decoder = json.JSONDecoder()
    for start in range(len(raw)):
        if raw[start] != "{":
            continue
        try:
            doc, _ = decoder.raw_decode(raw[start:])
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict):
            return doc
    raise ParseError("response contains no JSON object")


def parse_llm_response(raw: str, label_set: LabelSet) -> ParsedTurn:
    """Validate a backend response against the response contract.

    Out-of-range strengths are clamped, unknown attribute keys are mapped
    through the label lexicon or dropped; every such repair appends a note
    to the feedback so the user sees what happened.  Structural violations
    raise ParseError (the caller retries).
    """
    doc = _extract_json_object(raw)
    if "edits" not in doc or not isinstance(doc["edits"], list):
        raise ParseError("missing 'edits' list")
    feedback = doc.get("feedback", "")
    if not isinstance(feedback, str):
        raise ParseError("'feedback' must be a string")
    suggestions = doc.get("suggestions", [])
    if not isinstance(suggestions, list) or not all(isinstance(s, str) for s in suggestions):
        raise ParseError("'suggestions' must be a list of strings")

    notes: list[str] = []
    edits: list[EditInstruction] = []
    for item in doc["edits"]:
        if not isinstance(item, dict) or not isinstance(item.get("attribute"), str):
            raise ParseError("each edit needs a string 'attribute'")
        attr = item["attribute"]
        if attr not in label_set.index:
            mapped = lexicon_lookup(attr, label_set)
            if not mapped:
                notes.append(f"dropped edit for unknown attribute '{attr}'")
                continue
            attr = mapped[0]
        prompt = item.get("prompt")
        if prompt is not None and not isinstance(prompt, str):
            raise ParseError("'prompt' must be a string")
        if "strength" in item:
            value = item["strength"]
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ParseError("'strength' must be a number")
            strength = clamp01(value)
            if strength != value:
                notes.append(f"clamped strength {value} to {strength}")
            edits.append(EditInstruction(attr, prompt, "absolute", strength=strength))
        elif "delta" in item:
            value = item["delta"]
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ParseError("'delta' must be a number")
            delta = min(max(float(value), -1.0), 1.0)
            if delta != value:
                notes.append(f"clamped delta {value} to {delta}")
            edits.append(EditInstruction(attr, prompt, "delta", delta=delta))
        else:
            notes.append(f"dropped edit for '{attr}': neither strength nor delta")
    if notes:
        feedback = (feedback + " " if feedback else "") + "(" + "; ".join(notes) + ")"
    return ParsedTurn(feedback=feedback, edits=edits, suggestions=suggestions, parser_source="llm")


# -- deterministic fallback grammar ---------------------------------------------


def _find_attribute_spans(tokens: list[str], label_set: LabelSet) -> list[tuple[int, int, str]]:
    """Non-overlapping (start, end, label) matches, longest phrase first."""
    candidates = []
    for label in label_set.labels:
        for phrase in label_set.phrases_for(label):
            words = tokenize(phrase)
            n = len(words)
            for i in range(len(tokens) - n + 1):
                if tokens[i:i + n] == words:
                    candidates.append((-n, i, label))
    candidates.sort()
    taken: set[int] = set()
    spans = []
    for neg_n, start, label in candidates:
        end = start - neg_n
        if any(i in taken for i in range(start, end)):
            continue
        taken.update(range(start, end))
        spans.append((start, end, label))
    spans.sort()
    # one edit per attribute per turn: keep the first span of each label
    seen: set[str] = set()
    return [s for s in spans if not (s[2] in seen or seen.add(s[2]))]


def _adjective_near(tokens: list[str], start: int, end: int, skip: set[str]) -> str | None:
    for i in range(end, len(tokens)):
        if tokens[i] not in skip and not tokens[i].replace(".", "").isdigit():
            return tokens[i]
    for i in range(start - 1, -1, -1):
        if tokens[i] not in skip and not tokens[i].replace(".", "").isdigit():
            return tokens[i]
    return None


_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?")


def _parse_number(text: str) -> float | None:
    matches = _NUMBER_RE.findall(text)
    return float(matches[-1]) if matches else None


def fallback_parse(user_text: str, bank: MemoryBank, label_set: LabelSet) -> ParsedTurn:
    """Rule grammar over editing phrasings; anything else is a chat turn.

    Patterns: "make <attr> <adjective>" (intensifier words choose the
    strength), bare "more"/"less" refinements resolving to the most
    recently edited attribute, "reset <attr>", "reset everything", and the
    structured "set <attr> strength to <value>" used by slider clients.
    """
    tokens = tokenize(user_text)
    strength_words: dict[str, float] = GRAMMAR["strength_words"]
    delta_words: dict[str, float] = GRAMMAR["delta_words"]
    stop = set(GRAMMAR["stopwords"]) | set(strength_words) | set(delta_words)
    attr_skip = {t for _, _, label in _find_attribute_spans(tokens, label_set)
                 for t in tokenize(" ".join(label_set.phrases_for(label)))}

    if tokens and tokens[0] in GRAMMAR["reset_words"]:
        rest = [t for t in tokens[1:] if t not in GRAMMAR["stopwords"]]
        if rest and all(t in GRAMMAR["reset_all_words"] for t in rest):
            return ParsedTurn(
                feedback="Cleared all tracked attribute edits (parameters stay as they are).",
                reset_all=True,
            )

    spans = _find_attribute_spans(tokens, label_set)

    if spans and tokens and tokens[0] == "set" and "strength" in tokens:
        value = _parse_number(user_text)
        if value is not None:
            start, end, label = spans[0]
            strength = clamp01(value)
            return ParsedTurn(
                feedback=f"Setting {label} strength to {strength}.",
                edits=[EditInstruction(label, None, "absolute", strength=strength)],
            )

    if spans and tokens[0] in GRAMMAR["reset_words"]:
        edits = [EditInstruction(label, None, "absolute", strength=0.0) for _, _, label in spans]
        names = ", ".join(e.attribute_key for e in edits)
        return ParsedTurn(feedback=f"Reset editing strength of {names} to 0.", edits=edits)

    if spans:
        intensifier = next((strength_words[t] for t in tokens if t in strength_words), None)
        strength = intensifier if intensifier is not None else GRAMMAR["default_strength"]
        edits = []
        descriptions = []
        for start, end, label in spans:
            adjective = _adjective_near(tokens, start, end, stop | attr_skip)
            attr_phrase = label_set.phrases_for(label)[0]
            prompt = f"{adjective} {attr_phrase}" if adjective else attr_phrase
            edits.append(EditInstruction(label, prompt, "absolute", strength=strength))
            descriptions.append(f"{label}: '{prompt}' at strength {strength}")
        return ParsedTurn(feedback="Editing " + "; ".join(descriptions) + ".", edits=edits)

    delta = next((delta_words[t] for t in tokens if t in delta_words), None)
    if delta is not None:
        recent = bank.most_recent()
        if recent is None:
            return ParsedTurn(
                feedback="Nothing has been edited yet, so there is nothing to adjust. "
                         "Try 'make the nose bigger' first."
            )
        direction = "Increasing" if delta > 0 else "Decreasing"
        return ParsedTurn(
            feedback=f"{direction} the {recent.attribute_key} edit by {abs(delta)}.",
            edits=[EditInstruction(recent.attribute_key, None, "delta", delta=delta)],
        )

    attrs = ", ".join(label_set.labels)
    return ParsedTurn(
        feedback="I didn't find an edit in that. I can adjust: " + attrs + ". "
                 "Try 'make the nose slightly bigger'.",
        suggestions=["make the nose slightly bigger", "darker eyeshadow"],
    )


# -- bank update ----------------------------------------------------------------


def apply_turn(parsed: ParsedTurn, bank: MemoryBank, label_set: LabelSet) -> tuple[MemoryBank, list[ResolvedEdit]]:
    """Fold a parsed turn into a copy of the bank; returns resolved edits.

    Absolute edits overwrite prompt and strength; delta edits shift the
    stored strength (from 0 for attributes never edited) and reuse the
    stored prompt unless the edit carries one.  The round counter moves
    exactly once per turn, chat-only turns included.
    """
    updated = bank.copy()
    updated.round_counter += 1
    rnd = updated.round_counter
    resolved: list[ResolvedEdit] = []
    for edit in parsed.edits:
        state = updated.entries.get(edit.attribute_key)
        default_prompt = label_set.phrases_for(edit.attribute_key)[0] if edit.attribute_key in label_set.index else edit.attribute_key
        if edit.mode == "absolute":
            strength = clamp01(edit.strength)
            prompt = edit.prompt or (state.prompt if state else default_prompt)
        else:
            base = state.strength if state else 0.0
            strength = clamp01(base + (edit.delta or 0.0))
            prompt = edit.prompt or (state.prompt if state else default_prompt)
        updated.edit_counter += 1
        if state is None:
            state = AttributeState(
                attribute_key=edit.attribute_key, prompt=prompt, strength=strength,
                last_round=rnd, last_seq=updated.edit_counter,
            )
            updated.entries[edit.attribute_key] = state
        else:
            state.prompt = prompt
            state.strength = strength
            state.last_round = rnd
            state.last_seq = updated.edit_counter
        state.history.append((rnd, prompt, strength))
        resolved.append(ResolvedEdit(edit.attribute_key, prompt, strength))
    if parsed.reset_all:
        updated.entries.clear()
    return updated, resolved


# -- top-level turn parsing -------------------------------------------------------


def parse_turn(
    user_text: str,
    history: list[tuple[str, str]],
    bank: MemoryBank,
    label_set: LabelSet,
    backend=None,
) -> ParsedTurn:
    """Parse through the backend with bounded retries, else the grammar.

    A backend is any object with ``complete(request: dict) -> str``.  On a
    malformed response the request is retried up to twice with an addendum
    explaining the failure; exhaustion or transport errors fall back to the
    rule grammar.
    """
    if backend is None:
        return fallback_parse(user_text, bank, label_set)
    request = build_llm_request(user_text, history, bank, label_set)
    for _ in range(MAX_PARSE_RETRIES + 1):
        try:
            raw = backend.complete(request)
        except Exception:
            break
        try:
            return parse_llm_response(raw, label_set)
        except ParseError as exc:
            request = dict(request, error_addendum=f"previous response invalid: {exc}")
    parsed = fallback_parse(user_text, bank, label_set)
    parsed.parser_source = "fallback"
    return parsed
