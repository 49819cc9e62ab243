"""Prompt ensemble construction and text token aggregation.

Two-class prompt ensembles describe a category in a normal and an anomalous
state. Each ensemble line is a base template with a domain word and a state
phrase filled in; the two aggregated text tokens are the renormalized means
of the per-prompt embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BASE_TEMPLATES = (
    "a {d} cropped photo of the {s}",
    "a {d} cropped photo of a {s}",
    "a {d} close-up photo of a {s}",
    "a {d} close-up photo of the {s}",
    "a bright {d} photo of a {s}",
    "a bright {d} photo of the {s}",
    "a dark {d} photo of the {s}",
    "a dark {d} photo of a {s}",
    "a jpeg corrupted {d} photo of a {s}",
    "a jpeg corrupted {d} photo of the {s}",
    "a blurry {d} photo of the {s}",
    "a blurry {d} photo of a {s}",
    "a {d} photo of a {s}",
    "a {d} photo of the {s}",
    "a {d} photo of a small {s}",
    "a {d} photo of the small {s}",
    "a {d} photo of a large {s}",
    "a {d} photo of the large {s}",
    "a {d} photo of the {s} for visual inspection",
    "a {d} photo of a {s} for visual inspection",
    "a {d} photo of the {s} for anomaly detection",
    "a {d} photo of a {s} for anomaly detection",
)

NORMAL_STATES = (
    "normal {c}",
    "unblemished {c}",
    "flawless {c}",
    "perfect {c}",
    "{c} without flaw",
    "{c} without damage",
    "{c} without defect",
)

ANOMALOUS_STATES = (
    "damaged {c}",
    "abnormal {c}",
    "imperfect {c}",
    "blemished {c}",
    "{c} with flaw",
    "{c} with damage",
    "{c} with defect",
)

SURFACE_DOMAINS = ("industrial", "textural", "surface")
OBJECT_DOMAINS = ("industrial", "manufacturing")

# texture-like categories get the surface domain words
SURFACE_CATEGORIES = frozenset({"carpet", "leather", "grid", "tile", "wood"})

KINDS = ("surface", "object")


def kind_for_category(class_name: str) -> str:
    return "surface" if class_name.lower() in SURFACE_CATEGORIES else "object"


@dataclass(frozen=True)
class PromptSet:
    """Expanded prompt ensembles for one category."""

    class_name: str
    normal: tuple[str, ...]
    anomalous: tuple[str, ...]

    def __post_init__(self):
        for side in (self.normal, self.anomalous):
            if not side:
                raise ValueError("empty prompt ensemble")
            if len(set(side)) != len(side):
                raise ValueError("duplicate prompts in ensemble")
            for p in side:
                if self.class_name not in p:
                    raise ValueError(f"prompt missing class name: {p!r}")


def expand_templates(class_name: str, kind: str) -> PromptSet:
    """Fill every base template with every domain word and state phrase.

    Surface categories use three domain words, object categories two, so the
    per-polarity ensemble size is 22 * 7 * |domains|.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown category kind: {kind!r}")
    if not class_name or class_name != class_name.strip():
        raise ValueError(f"bad class name: {class_name!r}")
    domains = SURFACE_DOMAINS if kind == "surface" else OBJECT_DOMAINS

    def side(states):
        out = []
        for d in domains:
            for tpl in BASE_TEMPLATES:
                for st in states:
                    out.append(tpl.format(d=d, s=st.format(c=class_name)))
        return tuple(out)

    return PromptSet(class_name, side(NORMAL_STATES), side(ANOMALOUS_STATES))


def write_prompt_file(prompts: tuple[str, ...], path: str | Path) -> None:
    """One prompt per line, UTF-8, LF endings."""
    Path(path).write_bytes(("\n".join(prompts) + "\n").encode("utf-8"))


def read_prompt_file(path: str | Path) -> tuple[str, ...]:
    lines = Path(path).read_bytes().decode("utf-8").split("\n")
    return tuple(line for line in lines if line)


@dataclass(frozen=True)
class TextTokenPair:
    """Aggregated normal/anomalous text tokens plus the softmax temperature."""

    t_n: np.ndarray
    t_a: np.ndarray
    tau: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "t_n", np.asarray(self.t_n, dtype=np.float64))
        object.__setattr__(self, "t_a", np.asarray(self.t_a, dtype=np.float64))
        if self.t_n.shape != self.t_a.shape or self.t_n.ndim != 1:
            raise ValueError("text tokens must be 1-d and share a dimension")
        for t in (self.t_n, self.t_a):
            if not np.all(np.isfinite(t)):
                raise ValueError("non-finite text token")
            if abs(np.linalg.norm(t) - 1.0) > 1e-6:
                raise ValueError("text token not unit norm")
        if not (self.tau > 0.0):
            raise ValueError("tau must be positive")


def aggregate_text_tokens(
    normal_embeds: np.ndarray, anomalous_embeds: np.ndarray, tau: float = 0.01
) -> TextTokenPair:
    """Mean-pool each polarity's embeddings, then renormalize to unit length.

    Inputs are expected row-wise (n, d) and already unit norm per prompt;
    the mean is taken over rows as given.
    """

    def pooled(embeds):
        arr = np.asarray(embeds, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ValueError("empty prompt embedding set")
        mean = arr.mean(axis=0)
        norm = np.linalg.norm(mean)
        if not np.isfinite(norm) or norm < 1e-12:
            raise ValueError("degenerate text token")
        return mean / norm

    return TextTokenPair(pooled(normal_embeds), pooled(anomalous_embeds), tau)
