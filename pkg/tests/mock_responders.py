"""Deterministic request -> reply functions standing in for the detector, the
final LLM and the generators.

Each factory returns a callable suitable for ``MockBackend`` or for a config
``responder = "mock_responders:<factory>"``. Randomness is derived from a
hash of the prompt and sample tag, so replies are reproducible yet differ
across the L detector samples of one prompt.
"""

from __future__ import annotations

import hashlib
import random

from valuecascade.gateway import ChatRequest
from valuecascade.prompts import format_detector_response
from valuecascade.values import schwartz_system

SYSTEM = schwartz_system()
NAMES = SYSTEM.names

WORDS = (
    "tax school health river budget family police market climate freedom music tradition village science "
    "justice loyalty harbor garden energy museum farmer doctor bridge border language privacy vaccine "
    "election festival forest internet pension rent salary sport theatre transit water youth wildlife"
).split()


def rng_for(request: ChatRequest, salt: str = "") -> random.Random:
    blob = salt + request.sample_tag + "\x00" + "\n".join(m.content for m in request.messages)
    return random.Random(int(hashlib.sha256(blob.encode()).hexdigest()[:16], 16))


def prompt_of(request: ChatRequest) -> str:
    return request.messages[-1].content


def detector_input(prompt: str) -> str:
    return prompt.split("### Input:\n", 1)[1].split("\n\n### Response:", 1)[0]


def final_candidates(prompt: str) -> list[str]:
    tail = prompt.split("##### End of Example", 1)[1]
    return [n for n in NAMES if f"{n}, Definition:" in tail]


def is_detector(prompt: str) -> bool:
    return "### Response:" in prompt and "Human values" not in prompt


def is_final(prompt: str) -> bool:
    return "##### End of Example" in prompt


def text_hash(text: str) -> int:
    return int(hashlib.sha256(text.encode()).hexdigest()[:8], 16)


def verdict_lines(verdicts: dict[str, bool]) -> str:
    return "\n".join(
        f"{n} - {'Relevant' if ok else 'Irrelevant'}. Explanation: {'it fits' if ok else 'no link'}." for n, ok in verdicts.items()
    )


def random_sentence(rng: random.Random, n: int = 12) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(n)).capitalize() + "."


# -- factories ----------------------------------------------------------------------------------


def cascade():
    """Per text: two stable values, one value present in about half the samples."""

    def respond(request: ChatRequest) -> str:
        prompt = prompt_of(request)
        if is_detector(prompt):
            h = text_hash(detector_input(prompt))
            stable = [NAMES[h % 20], NAMES[(h // 20) % 20]]
            wobbly = NAMES[(h // 400) % 20]
            chosen = list(dict.fromkeys(stable + ([wobbly] if rng_for(request).random() < 0.5 else [])))
            return format_detector_response([(n, f"the text touches on {n.lower()}") for n in chosen])
        if is_final(prompt):
            return verdict_lines({n: text_hash(n + prompt[-200:]) % 2 == 0 for n in final_candidates(prompt)})
        if "Topic:" in prompt:
            return f"Answer: supportive\nExplanation: {random_sentence(rng_for(request))}"
        raise AssertionError("unexpected prompt")

    return respond


def flip(value_index: int = 5, constant_index: int = 0):
    """One value flips with probability 0.5 per detector sample; one is always on."""

    def respond(request: ChatRequest) -> str:
        prompt = prompt_of(request)
        if is_detector(prompt):
            chosen = [NAMES[constant_index]]
            if rng_for(request).random() < 0.5:
                chosen.append(NAMES[value_index])
            return format_detector_response([(n, "x") for n in chosen])
        return verdict_lines({n: True for n in final_candidates(prompt)})

    return respond


def irrelevant():
    """Detector flags a value in about half the samples; the LLM rejects every candidate."""

    def respond(request: ChatRequest) -> str:
        prompt = prompt_of(request)
        if is_detector(prompt):
            if rng_for(request).random() < 0.5:
                return format_detector_response([("Hedonism", "fun")])
            return "None."
        if is_final(prompt):
            return verdict_lines({n: False for n in final_candidates(prompt)})
        if "Topic:" in prompt:
            return f"Answer: unsupportive\nExplanation: {random_sentence(rng_for(request))}"
        raise AssertionError("unexpected prompt")

    return respond


def generator():
    """Compliant generator for explanation, ICL and targeted prompts."""

    def respond(request: ChatRequest) -> str:
        prompt = prompt_of(request)
        rng = rng_for(request)
        if "can you explain how the text is related" in prompt:
            name = prompt.split("human value ", 1)[1].split(":\n", 1)[0]
            return f"It appeals to {name.lower()}."
        if prompt.rstrip().endswith("DATA 9:"):
            items = []
            for k in range(2):
                names = rng.sample(NAMES, 2)
                labels = format_detector_response([(n, f"mentions {n.lower()}") for n in names]).replace("\n", " ")
                items.append(f"DATA {9 + k}: {random_sentence(rng, 14)} - {labels}")
            return "\n".join(items)[len("DATA 9: "):]
        if "Can you generate text that resorts" in prompt:
            return f"Text - {random_sentence(rng, 14)}\nExplanation: it reflects the requested values."
        raise AssertionError("unexpected prompt")

    return respond
