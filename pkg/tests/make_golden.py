"""Regenerate the golden dialogue fixture.

Run after any intentional change to the solver, stack constants, or
grammar:  python3 tests/make_golden.py
"""

import json
from pathlib import Path

from charedit.bundle import build_desk_stack
from charedit.session import handle_turn, start_session

GOLDEN_SEED = 7

DIALOGUE = [
    "make the nose slightly bigger",
    "a bit more",
    "very dark eyeshadow",
    "hello there",
    "make the jaw wider",
]


def generate() -> dict:
    stack = build_desk_stack(seed=0)
    session = start_session(stack, seed=GOLDEN_SEED)
    turns = []
    for text in DIALOGUE:
        record = handle_turn(session, text)
        turns.append({
            "text": text,
            "feedback": record.feedback,
            "x_after": session.current_x.tolist(),
            "parameters_version": session.parameters_version,
            "bank_strengths": {k: st.strength for k, st in sorted(session.bank.entries.items())},
        })
    return {"seed": GOLDEN_SEED, "stack_seed": 0, "dialogue": DIALOGUE, "turns": turns}


if __name__ == "__main__":
    out = Path(__file__).parent / "data" / "golden_dialogue.json"
    out.parent.mkdir(exist_ok=True)
    out.write_text(json.dumps(generate(), indent=2))
    print(f"wrote {out}")
