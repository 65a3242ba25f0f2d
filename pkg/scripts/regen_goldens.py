#!/usr/bin/env python3
"""Regenerate the committed prompt golden files under tests/goldens/prompts.

Run this only when the template wording deliberately changes; the test suite
asserts byte equality against the committed files.
"""

from __future__ import annotations

from pathlib import Path

from finrag.prompts import MODE_ANSWER_ONLY, MODE_COT, Demonstration, DemonstrationSet, build_prompt
from finrag.synth import golden_prompt_fixture

GOLDEN_DIR = Path(__file__).resolve().parent.parent / "tests" / "goldens" / "prompts"


def main() -> None:
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    for language in ("zh", "en"):
        demos, target = golden_prompt_fixture(language)
        for mode in (MODE_ANSWER_ONLY, MODE_COT):
            for k in (0, 5):
                dset = DemonstrationSet(
                    examples=[Demonstration.from_question(q) for q in demos[:k]],
                    language=language,
                    mode=mode,
                )
                prompt = build_prompt(dset, target)
                path = GOLDEN_DIR / f"{language}_{mode}_k{k}.txt"
                path.write_bytes(prompt.encode("utf-8"))
                print(f"wrote {path} ({len(prompt)} chars)")


if __name__ == "__main__":
    main()
