"""LLM-as-judge scoring of generated answers against references.

A separate judge endpoint rates each answer 1-5 for accuracy and
factuality under a fixed rubric; raw scores rescale to percentages as
(raw - 1) / 4 * 100. Unparsable judge output is retried once and then
recorded as an abstention so forced parses cannot bias the means.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .generation import GenerationRequest, generate

logger = logging.getLogger(__name__)

JUDGE_SCALE = (1, 5)

DEFAULT_RUBRIC = """\
Rate the candidate answer against the reference answer on two dimensions,
each on a 1-5 scale:

accuracy - how well the candidate answers the question compared to the
reference. 1: contradicts or misses the reference entirely. 3: partially
correct with important omissions. 5: fully consistent with the reference.

factuality - whether every claim in the candidate is supported by the
reference or is standard clinical knowledge. 1: mostly unsupported or
fabricated claims. 3: minor unsupported details. 5: no unsupported claims.

Reply in exactly this format:
accuracy: <1-5>
factuality: <1-5>
rationale: <one or two sentences>"""

_RETRY_SUFFIX = (
    "\n\nYour previous reply could not be parsed. Reply ONLY in the format:\n"
    "accuracy: <1-5>\nfactuality: <1-5>\nrationale: <text>"
)

_ACCURACY_RE = re.compile(r"accuracy\s*[:=]\s*([1-5])\b", re.IGNORECASE)
_FACTUALITY_RE = re.compile(r"factuality\s*[:=]\s*([1-5])\b", re.IGNORECASE)
_RATIONALE_RE = re.compile(r"rationale\s*[:=]\s*(.+)", re.IGNORECASE | re.DOTALL)


@dataclass
class JudgeRating:
    accuracy_raw: int
    factuality_raw: int
    accuracy_pct: float
    factuality_pct: float
    rationale: str = ""

    @classmethod
    def from_raw(cls, accuracy: int, factuality: int, rationale: str = "") -> "JudgeRating":
        for value in (accuracy, factuality):
            if not JUDGE_SCALE[0] <= value <= JUDGE_SCALE[1]:
                raise ValueError(f"raw judge score out of range: {value}")
        return cls(
            accuracy_raw=accuracy,
            factuality_raw=factuality,
            accuracy_pct=(accuracy - 1) / 4 * 100.0,
            factuality_pct=(factuality - 1) / 4 * 100.0,
            rationale=rationale,
        )


def parse_judge_response(text: str) -> JudgeRating | None:
    acc = _ACCURACY_RE.search(text)
    fact = _FACTUALITY_RE.search(text)
    if not acc or not fact:
        return None
    rationale_match = _RATIONALE_RE.search(text)
    rationale = rationale_match.group(1).strip() if rationale_match else ""
    return JudgeRating.from_raw(int(acc.group(1)), int(fact.group(1)), rationale)


def _judge_prompt(question: str, reference: str, candidate: str, rubric: str) -> str:
    return (
        f"{rubric}\n\n"
        f"Question:\n{question}\n\n"
        f"Reference answer:\n{reference}\n\n"
        f"Candidate answer:\n{candidate}"
    )


def judge(
    question: str,
    reference: str,
    candidate: str,
    judge_endpoint,
    rubric: str = DEFAULT_RUBRIC,
) -> JudgeRating | None:
    """Rate one answer; None signals an abstention after the single retry."""
    prompt = _judge_prompt(question, reference, candidate, rubric)
    for attempt, content in enumerate((prompt, prompt + _RETRY_SUFFIX)):
        request = GenerationRequest(
            messages=[{"role": "user", "content": content}],
            temperature=0.0,
        )
        response = generate(judge_endpoint, request)
        rating = parse_judge_response(response.text)
        if rating is not None:
            return rating
        logger.warning(
            "unparsable judge output (attempt %d): %r", attempt + 1, response.text[:120]
        )
    return None
