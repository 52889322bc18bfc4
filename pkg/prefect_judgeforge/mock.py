"""A deterministic stand-in for every model the pipeline talks to.

`SimulatedModel` plugs into `MockChatProvider` as its responder. It recognises
the prompt family from the anchor phrases each template carries and answers in
the format that family asks for, so synthesis, response collection, judging
and classification all run offline. Answers depend only on the seed, the model
name and the prompt text.
"""
import hashlib
import json
import re
from fractions import Fraction
from typing import List, Tuple

import numpy as np

from prefect_judgeforge.gateway import ChatRequest
from prefect_judgeforge.models import (
    GradedVerdict,
    PairedPoint,
    PairwiseVerdict,
    ScoredPoint,
)
from prefect_judgeforge.verdicts import render_graded_verdict, render_pairwise_verdict

CRITERIA = re.compile(r"\[Criteria Begin\]\n(.*?)\n\[Criteria End\]", re.DOTALL)
SCORE_RANGE = re.compile(r"assign scores \((?:between )?(\d+)-(\d+)\)")
CRITERION_LINE = re.compile(r"^\d+\. ([^:]+):")
BATCH = re.compile(r"Please generate (\d+) sets of question-answer pairs")
QUIZ_COUNT = re.compile(r"(?:help me generate|please design|Please prepare) (\d+) ")
QUIZ_SUBJECT = re.compile(r"in the subject of (.+?)\. ")
QUIZ_TOPIC = re.compile(r"under the theme of (.+?)\. ")
QUESTIONING_NAME = re.compile(r"^Name: (.+)$", re.MULTILINE)
COMPANY = re.compile(r"\[Company: (.+?)\]")
REFERENCE_TEXT = re.compile(r"Reference Text:\n(.*?)\n\nRequirements:", re.DOTALL)
SCENARIO_LINE = re.compile(r"^\d+\. ([^:]+): ", re.MULTILINE)
QUERY = re.compile(r"Now I have a user query as follows:\n\[(.*)\]\n", re.DOTALL)
REPHRASE_COUNT = re.compile(r"Please propose (\d+) alternative versions")
WORD = re.compile(r"\w+")

LEVELS = ("easy", "medium", "difficult")
STRENGTH_PHRASES = (
    "handles this well",
    "is convincingly addressed",
    "is met with care",
)
WEAKNESS_PHRASES = (
    "leaves room for improvement",
    "is only partly addressed",
    "falls short in places",
)
ALIAS_WORDS = (
    ("Soundness", "Judges whether every statement holds up under scrutiny"),
    ("Fidelity", "Checks that nothing essential is lost or distorted"),
    ("Craft", "Looks at how skilfully the piece is put together"),
    ("Fit", "Considers how closely the reply tracks what was asked"),
)
REFUSAL = (
    "Sorry, this article does not contain enough information related to {name} "
    "to generate relevant questions and answers."
)


class SimulatedModel:
    """
    Callable responder producing format-correct answers for every prompt family.

    Every reply is drawn from a stream seeded by the model and prompt. A
    request with a non-zero `attempt` draws from its own stream, and its
    questioning items continue the numbering of earlier attempts.

    Args:
        seed: Seed mixed into every per-prompt random stream.
        refuse_questioning: Answer questioning prompts with the refusal sentence.
    """

    def __init__(self, seed: int = 0, refuse_questioning: bool = False):
        self.seed = seed
        self.refuse_questioning = refuse_questioning

    def _rng(self, *parts: str) -> np.random.Generator:
        digest = hashlib.sha256("\x1f".join((str(self.seed),) + parts).encode("utf-8"))
        return np.random.default_rng(int.from_bytes(digest.digest()[:8], "big"))

    def __call__(self, request: ChatRequest) -> str:
        prompt = request.prompt
        attempt = (str(request.attempt),) if request.attempt else ()
        rng = self._rng(request.model, prompt, *attempt)
        if "[Response 1]:" in prompt and "[[Both Responses are tied]]" in prompt:
            return self.pairwise(prompt, rng)
        if "Your task is to evaluate the quality of AI responses" in prompt:
            return self.graded(prompt, rng)
        if "Please directly provide the name of the scenario" in prompt:
            return self.classify(prompt, rng)
        if "[END OF QA PAIR]" in prompt:
            return self.questioning(prompt, rng, request.attempt)
        if "alternative versions of this criterion" in prompt:
            return self.rephrase(prompt, rng)
        if "in jsonl format" in prompt:
            return self.quiz(prompt, rng)
        return self.respond(request.model, prompt, rng)

    @staticmethod
    def _criteria(prompt: str) -> List[str]:
        block = CRITERIA.search(prompt)
        if block is None:
            return ["Overall quality"]
        names = [CRITERION_LINE.match(line) for line in block.group(1).splitlines()]
        return [match.group(1).strip() for match in names if match]

    @staticmethod
    def _range(prompt: str) -> Tuple[int, int]:
        match = SCORE_RANGE.search(prompt)
        return (int(match.group(1)), int(match.group(2))) if match else (1, 5)

    @staticmethod
    def _mean(scores: List[int]) -> int:
        return int(Fraction(sum(scores), len(scores)) + Fraction(1, 2))

    @staticmethod
    def _pick(rng: np.random.Generator, options: Tuple[str, ...]) -> str:
        return options[int(rng.integers(len(options)))]

    def graded(self, prompt: str, rng: np.random.Generator) -> str:
        """A graded verdict with one item per criterion and a mean overall score."""
        low, high = self._range(prompt)
        middle = Fraction(low + high, 2)
        strengths, weaknesses, scores = [], [], []
        for name in self._criteria(prompt):
            score = int(rng.integers(low, high + 1))
            scores.append(score)
            if score >= middle:
                text = f"{name}: {name.lower()} {self._pick(rng, STRENGTH_PHRASES)}."
                strengths.append(ScoredPoint(text=text, score=score))
            else:
                text = f"{name}: {name.lower()} {self._pick(rng, WEAKNESS_PHRASES)}."
                weaknesses.append(ScoredPoint(text=text, score=score))
        # construct() skips the five-tier bounds check; the range comes from the prompt
        verdict = GradedVerdict.construct(
            overall=self._mean(scores), strengths=strengths, weaknesses=weaknesses
        )
        return render_graded_verdict(verdict)

    def pairwise(self, prompt: str, rng: np.random.Generator) -> str:
        """A pairwise verdict whose winner follows the two mean scores."""
        low, high = self._range(prompt)
        rationale, first, second = [], [], []
        for name in self._criteria(prompt):
            score_1, score_2 = (int(value) for value in rng.integers(low, high + 1, 2))
            first.append(score_1)
            second.append(score_2)
            rationale.append(
                PairedPoint(
                    text=f"{name}: the responses differ in {name.lower()}.",
                    score_1=score_1,
                    score_2=score_2,
                )
            )
        score_1, score_2 = self._mean(first), self._mean(second)
        if score_1 > score_2:
            winner = "response_1"
        elif score_2 > score_1:
            winner = "response_2"
        else:
            winner = "tie"
        verdict = PairwiseVerdict.construct(
            winner=winner, score_1=score_1, score_2=score_2, rationale=rationale
        )
        return render_pairwise_verdict(verdict)

    def classify(self, prompt: str, rng: np.random.Generator) -> str:
        """Picks the scenario sharing most words with the query."""
        names = SCENARIO_LINE.findall(prompt.split("Now I have a user query")[0])
        query = QUERY.search(prompt)
        words = set(WORD.findall(query.group(1).lower())) if query else set()
        overlaps = [len(words & set(WORD.findall(name.lower()))) for name in names]
        if not names or max(overlaps) == 0:
            return "default"
        best = [name for name, hits in zip(names, overlaps) if hits == max(overlaps)]
        return best[int(rng.integers(len(best)))]

    def questioning(
        self, prompt: str, rng: np.random.Generator, attempt: int = 0
    ) -> str:
        """QUESTION/ANSWER/LEVEL blocks quoting the reference text."""
        name = QUESTIONING_NAME.search(prompt)
        scenario = name.group(1).strip() if name else "the scenario"
        if self.refuse_questioning:
            return REFUSAL.format(name=scenario)
        batch = BATCH.search(prompt)
        count = int(batch.group(1)) if batch else 5
        reference = REFERENCE_TEXT.search(prompt)
        words = WORD.findall(reference.group(1)) if reference else []
        words = words or ["the", "article"]
        blocks = []
        first = attempt * count + 1
        for number in range(first, first + count):
            start = int(rng.integers(len(words)))
            focus = " ".join(words[start : start + 4])
            blocks.append(
                f"QUESTION: For a {scenario} request (item {number}), what does the "
                f'article say about "{focus}"?\n'
                f'ANSWER: The article discusses "{focus}" in its own context.\n'
                f"LEVEL: {self._pick(rng, LEVELS)}\n"
                "[END OF QA PAIR]"
            )
        return "\n\n".join(blocks)

    def quiz(self, prompt: str, rng: np.random.Generator) -> str:
        """One JSON object per line, shaped like the quiz template's example."""
        match = QUIZ_COUNT.search(prompt)
        count = int(match.group(1)) if match else 10
        subject = QUIZ_SUBJECT.search(prompt)
        topic = QUIZ_TOPIC.search(prompt)
        company = COMPANY.search(prompt)
        lines = []
        for number in range(1, count + 1):
            level = self._pick(rng, LEVELS)
            tag = f"{number}-{int(rng.integers(10_000))}"
            if subject:
                item = {
                    "question": f"Problem {tag}: an exercise in {subject.group(1)}.",
                    "level": level,
                    "subject": subject.group(1),
                }
            elif topic:
                item = {
                    "question": f"Task {tag}: code about {topic.group(1)}.",
                    "company": company.group(1) if company else "",
                    "level": level,
                    "topic": topic.group(1),
                }
            else:
                item = {
                    "question": f"Question {tag}: summarise the reading material.",
                    "answer": "A short summary of the material.",
                    "task": "summary",
                }
            lines.append(json.dumps(item, ensure_ascii=False))
        return "\n".join(lines)

    def rephrase(self, prompt: str, rng: np.random.Generator) -> str:
        """Alternative criterion wordings, one JSON object per line."""
        match = REPHRASE_COUNT.search(prompt)
        count = int(match.group(1)) if match else 3
        lines = []
        for index in rng.permutation(len(ALIAS_WORDS))[:count]:
            name, description = ALIAS_WORDS[int(index)]
            lines.append(json.dumps({"name": name, "description": description + "."}))
        return "\n".join(lines)

    def respond(self, model: str, prompt: str, rng: np.random.Generator) -> str:
        """A short answer stitched from words of the prompt."""
        words = WORD.findall(prompt) or ["ok"]
        picked = rng.integers(len(words), size=min(8, len(words)))
        return f"[{model}] " + " ".join(words[int(index)] for index in picked) + "."
