"""Few-shot prompt templates for caption rewriting and verb-phrase extraction.

Rendering is fixed-format: the instruction line, the exemplar blocks verbatim,
then the query block ``Input: <caption>`` followed by the output label. A flag
drops the exemplars for instruction-only ablations.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass


@dataclass(frozen=True)
class Exemplar:
    input: str
    outputs: tuple[str, ...]


@dataclass(frozen=True)
class PromptTemplate:
    instruction: str
    exemplars: tuple[Exemplar, ...]
    output_label: str = "Outputs:"
    numbered: bool = True

    def _render_outputs(self, outputs: tuple[str, ...]) -> str:
        if self.numbered:
            return "\n".join(f"{i}) {o}" for i, o in enumerate(outputs, 1))
        return format_phrase_list(outputs)

    def render(self, caption: str, include_exemplars: bool = True) -> str:
        parts = [self.instruction]
        if include_exemplars:
            for ex in self.exemplars:
                if self.numbered:
                    parts.append(f"Input: {ex.input}\n{self.output_label}\n{self._render_outputs(ex.outputs)}")
                else:
                    parts.append(f"Input: {ex.input}\n{self.output_label} {self._render_outputs(ex.outputs)}")
        parts.append(f"Input: {caption}\n{self.output_label}")
        return "\n".join(parts)


def format_phrase_list(phrases: tuple[str, ...]) -> str:
    return "[" + ", ".join(f"'{p}'" for p in phrases) + "]"


def parse_phrase_list(text: str) -> list[str]:
    """Parse a bracketed, quoted phrase list; tolerant of stray quote styles."""
    s = text.strip().split("\n")[0].strip()
    s = s.replace("`", "'").replace("‘", "'").replace("’", "'")
    m = re.search(r"\[.*\]", s)
    if not m:
        return []
    s = m.group(0)
    try:
        value = ast.literal_eval(s)
        if isinstance(value, (list, tuple)) and all(isinstance(p, str) for p in value):
            return [str(p) for p in value]
    except (ValueError, SyntaxError):
        pass
    inner = s[1:-1].strip()
    if not inner:
        return []
    return [p.strip().strip("'\"") for p in inner.split(",") if p.strip().strip("'\"")]


HARD_NEGATIVE_PROMPT = PromptTemplate(
    instruction=(
        "In this task, you are given an input sentence. Your job is to tell me "
        "10 output sentences with a different meaning by only changing the action verbs."
    ),
    exemplars=(
        Exemplar(
            "A man walks up to a woman holding an umbrella in a garden.",
            (
                "A man jumps up to a woman throwing an umbrella in a garden.",
                "A man runs up to a woman opening an umbrella in a garden.",
                "A man walks away from a woman buying an umbrella in a garden.",
                "A man throws up on a woman carrying an umbrella in a garden.",
                "A man punches a woman swinging an umbrella in a garden.",
                "A man sits with a woman wrapping up her umbrella in a garden.",
                "A man talks to a woman closing an umbrella in a garden.",
                "A man flirts with a woman playing with an umbrella in a garden.",
                "A man skips to a woman leaning on her umbrella in a garden.",
                "A man sprints to a man losing her umbrella in a garden.",
            ),
        ),
        Exemplar(
            "Surfers ride the waves in an ocean.",
            (
                "Surfers get hit by the waves in an ocean.",
                "Surfers swimming in the waves in an ocean.",
                "Surfers meditating by the waves in an ocean.",
                "Surfers drowning in the waves in an ocean.",
                "Surfers asking for help in the waves in an ocean.",
                "Surfers teaming up in the waves in an ocean.",
                "Surfers snorkeling in the waves in the ocean.",
                "Surfers taking photos by the waves in the ocean.",
                "Surfers getting ready to go into the waves in the ocean.",
                "Surfers stretching by the waves in the ocean.",
            ),
        ),
        Exemplar(
            "A dentist holds the replica of a human mouth he shows how important flossing your teeth is.",
            (
                "A dentist cleans the replica of a human mouth he presents how unimportant flossing your teeth is.",
                "A dentist breaks the replica of a human mouth he screams how important flossing your teeth is.",
                "A dentist fixes the replica of a human mouth he says how important flossing your teeth is.",
                "A dentist buys the replica of a human mouth he explains how important brushing your teeth is.",
                "A dentist plays with the replica of a human mouth he remembers about how important washing your teeth is.",
                "A dentist tidies the replica of a human mouth he rambles on about how important breaking your teeth is.",
                "A dentist rotates the replica of a human mouth he presents how important fracturing your teeth is.",
                "A dentist places on his legs the replica of a human mouth he shows how important flossing your teeth is.",
                "A dentist searches for the replica of a human mouth he shows how important grinding your teeth is.",
                "A dentist picks up the replica of a human mouth he presents how important whitening your teeth is.",
            ),
        ),
        Exemplar(
            "Looks like a band playing on the stage and perhaps Community Center and people gathered around watching.",
            (
                "Looks like a band fighting on the stage and perhaps Community Center and people gathered around crying.",
                "Looks like a band dancing on the stage and perhaps Community Center and people gathered around smiling.",
                "Looks like a band singing on the stage and perhaps Community Center and people gathered around filming.",
                "Looks like a band bowing on the stage and perhaps Community Center and people gathered around clapping.",
                "Looks like a band making a speech on the stage and perhaps Community Center and people gathered around listening.",
                "Looks like a band laughing on the stage and perhaps Community Center and people gathered around cheering.",
                "Looks like a band working on the stage and perhaps Community Center and people gathered around standing.",
                "Looks like a band holding hands on the stage and perhaps Community Center and people gathered around praying.",
                "Looks like a band jumping on the stage and perhaps Community Center and people gathered around encouraging.",
                "Looks like a band yelling on the stage and perhaps Community Center and people gathered around watching.",
            ),
        ),
    ),
)


POSITIVE_PROMPT = PromptTemplate(
    instruction=(
        "In this task, you are given an input sentence. Your job is to tell me "
        "10 output sentences with the same meaning by only changing the action verbs."
    ),
    exemplars=(
        Exemplar(
            "A man walks up to a woman holding an umbrella in a garden.",
            (
                "A man strolls up to a woman holding an umbrella in a garden.",
                "A man marches up to a woman holding an umbrella in a garden.",
                "A man strides up to a woman holding an umbrella in a garden.",
                "A man wanders up to on a woman carrying an umbrella in a garden.",
                "A man tramps up to a woman holding an umbrella in a garden.",
                "A man steps up to with a woman holding an umbrella in a garden.",
                "A man wanders up to a woman holding an umbrella in a garden.",
                "A man treads up to a woman holding an umbrella in a garden.",
                "A man truges up to a woman holding an umbrella in a garden.",
                "A man treaks to a woman holding her umbrella in a garden.",
            ),
        ),
        Exemplar(
            "A dentist holds the replica of a human mouth he shows how important flossing your teeth is.",
            (
                "A dentist grasps the replica of a human mouth he shows how important flossing your teeth is.",
                "A dentist carries the replica of a human mouth he shows how important flossing your teeth is.",
                "A dentist clutches the replica of a human mouth he shows how important flossing your teeth is.",
                "A dentist grips the replica of a human mouth he shows how important flossing your teeth is.",
                "A dentist holds the replica of a human mouth he explains how important flossing your teeth is.",
                "A dentist holds the replica of a human mouth he presents how important flossing your teeth is.",
                "A dentist holds the replica of a human mouth he demonstrates how important flossing your teeth is.",
                "A dentist holds the replica of a human mouth he communicates how important flossing your teeth is.",
                "A dentist holds the replica of a human mouth he displays how important flossing your teeth is.",
                "A dentist holds the replica of a human mouth he highlights how important flossing your teeth is.",
            ),
        ),
        Exemplar(
            "This is a video of somebody touching wood.",
            (
                "This is a video of somebody tapping wood.",
                "This is a video of somebody stroking wood.",
                "This is a video of somebody pressing wood.",
                "This is a video of somebody handling wood.",
                "This is a video of somebody patting wood.",
                "This is a video of somebody brushing wood.",
                "This is a video of somebody grazing wood.",
                "This is a video of somebody poking wood.",
                "This is a video of somebody caressing wood.",
                "This is a video of somebody gripping wood.",
            ),
        ),
        Exemplar(
            "This is a video of a group of adults outside dancing.",
            (
                "This is a video of a group of adults outside whirling.",
                "This is a video of a group of adults outside twirling.",
                "This is a video of a group of adults outside swaying.",
                "This is a video of a group of adults outside partying.",
                "This is a video of a group of adults outside getting down.",
                "This is a video of a group of adults outside spinning.",
                "This is a video of a group of adults outside bouncing.",
                "This is a video of a group of adults outside bopping.",
                "This is a video of a group of adults outside waltzing.",
                "This is a video of a group of adults outside prancing.",
            ),
        ),
    ),
)


VERB_PHRASE_PROMPT = PromptTemplate(
    instruction=(
        "In this task, you are given an input sentence. Your job is to output "
        "the action verb phrases."
    ),
    output_label="Output:",
    numbered=False,
    exemplars=(
        Exemplar("the young girl in the middle of the road she is dancing.", ("dancing",)),
        Exemplar("a city area can be seen that has people in the walkways of runways.", ()),
        Exemplar(
            "this is a video of a birthday and she has a green colored dress and they are "
            "cutting a cake there's a clown on the side and the parents seem to be clap.",
            ("cutting cake", "clapping"),
        ),
        Exemplar(
            "one woman is talking to the camera about being safe he has a shirt with pal pal "
            "on it in the greenery behind her.",
            ("talking to camera",),
        ),
        Exemplar("a bicycle with a specialized back wheel slides along a wet paper.", ("sliding",)),
        Exemplar("a person clicking an object that is connected to a speaker.", ("clicking",)),
        Exemplar(
            "it's a video of a football game and one of the blue team is throwing the football "
            "really far into the endzone.",
            ("throwing football",),
        ),
        Exemplar("this is a video of someone filing their nails.", ("filing nails",)),
        Exemplar("airplane with the words British Airways can be seen over top.", ()),
        Exemplar(
            "man sitting standing at the front of the room is giving speech and asking an "
            "audience if they've ever heard of a specific song.",
            ("standing", "giving speech", "asking"),
        ),
        Exemplar(
            "it shows a video of a man talking on the phone yeah glasses and has a black phone.",
            ("talking on phone",),
        ),
        Exemplar(
            "hitchhiker is on the side of the road by a truck stop pulling a sign that says North.",
            ("pulling a sign",),
        ),
        Exemplar(
            "this is a video of a man on a ladder the man is cutting down a tree branch the man "
            "is wearing red.",
            ("cutting tree",),
        ),
        Exemplar(
            "on an indoor gym on a hard Brown meth there's a man young man with a barbell with "
            "lots of heavy weights on each side and he has it over his head stiff arm straight "
            "arm going to be and then he drops it on the floor while he does so you can hear "
            "the clanking of the weight that they smack against each other.",
            ("dropping",),
        ),
        Exemplar("he is using a large chainsaw to cut inside of a tree branch.", ("cutting tree",)),
        Exemplar(
            "I meant stacking up his cups for cup stacking concentration for a party.",
            ("stacking cups",),
        ),
        Exemplar("a large field shown with garbage and water flowing through it.", ("water flowing",)),
        Exemplar("a washing machine washes the clothes.", ("washing clothes",)),
    ),
)
