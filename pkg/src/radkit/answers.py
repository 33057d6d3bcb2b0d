"""Answer-letter extraction shared by the data pipeline and the evaluator."""

from __future__ import annotations

import re

# Last "Answer: X" wins; the letter must not run into a word, trailing
# punctuation is ignored. Both "Answer: B" and "Answer: (B)" are accepted.
_ANSWER_RE = re.compile(r"answer:\s*\(?([A-Za-z])\)?(?![A-Za-z0-9])", re.IGNORECASE)

# Option letters appear either as "(A) text" or as "A. text".
_OPTION_RE = re.compile(r"(?:\(([A-Z])\)|(?:^|\s)([A-Z])\.(?=\s))")


def extract_answer(text: str) -> str | None:
    """Return the declared answer letter (uppercased), or None if absent."""
    matches = _ANSWER_RE.findall(text)
    if not matches:
        return None
    return matches[-1].upper()


def option_letters(question: str) -> set[str]:
    """Letters of the answer options present in a question string."""
    letters = set()
    for paren, dotted in _OPTION_RE.findall(question):
        letters.add(paren or dotted)
    return letters
