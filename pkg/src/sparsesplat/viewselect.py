"""Input-view selection by farthest point sampling, evaluation-split
construction, and the training curriculum window.

FPS seeds at the point farthest from the centroid and greedily appends
the point maximizing the distance to the already-selected set; all ties
break toward the lower index, so selection is deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class SelectionPlan:
    """Disjoint input/target frame indices plus the candidate window size."""

    input_indices: tuple
    target_indices: tuple
    candidate_window: int

    def __post_init__(self):
        if set(self.input_indices) & set(self.target_indices):
            raise ValidationError("input and target indices overlap")

    def to_dict(self) -> dict:
        return {
            "input_indices": list(self.input_indices),
            "target_indices": list(self.target_indices),
            "candidate_window": self.candidate_window,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionPlan":
        return cls(tuple(d["input_indices"]), tuple(d["target_indices"]),
                   int(d["candidate_window"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "SelectionPlan":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fps(positions: Sequence, n: int) -> list[int]:
    """Farthest point sampling over camera locations; returns selection order."""
    pts = np.asarray(positions, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    count = pts.shape[0]
    if n > count:
        raise ValidationError(f"cannot sample {n} of {count} positions")
    if not np.all(np.isfinite(pts)):
        raise ValidationError("positions must be finite")
    if n == 0:
        return []
    centroid = pts.mean(axis=0)
    d_centroid = np.linalg.norm(pts - centroid, axis=1)
    selected = [int(np.argmax(d_centroid))]  # argmax takes the lowest index on ties
    min_dist = np.linalg.norm(pts - pts[selected[0]], axis=1)
    for _ in range(1, n):
        nxt = int(np.argmax(min_dist))
        selected.append(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return selected


def evaluation_split(positions: Sequence, n_span: int | None = None,
                     inputs: int = 5, targets: int = 56) -> SelectionPlan:
    """Benchmark split: FPS inputs, then equally index-strided targets.

    Selection is restricted to the first ``n_span`` frames. Targets are
    ``targets`` indices equally spaced over the frames left after input
    selection, rounded to the nearest available index with duplicates
    resolved to the next free one.
    """
    pts = np.asarray(positions, dtype=np.float64)
    total = pts.shape[0]
    if n_span is None:
        n_span = total
    if n_span > total:
        raise ValidationError(f"n_span {n_span} exceeds frame count {total}")
    if inputs + targets > n_span:
        raise ValidationError(
            f"insufficient frames: need {inputs}+{targets}, span is {n_span}"
        )
    input_idx = fps(pts[:n_span], inputs)
    chosen = set(input_idx)
    remaining = [i for i in range(n_span) if i not in chosen]
    if targets == len(remaining):
        target_idx = remaining
    else:
        slots = np.round(np.linspace(0, len(remaining) - 1, targets)).astype(int)
        used: set[int] = set()
        target_idx = []
        for slot in slots:
            j = int(slot)
            while j in used and j < len(remaining) - 1:
                j += 1
            while j in used:
                j -= 1
            used.add(j)
            target_idx.append(remaining[j])
    return SelectionPlan(tuple(input_idx), tuple(target_idx), int(n_span))


def curriculum(step: int, base: int = 30, increment: int = 30,
               period: int = 10000, max_window: int = 300) -> int:
    """Candidate-view window that grows stepwise during training."""
    if step < 0:
        raise ValidationError("step must be non-negative")
    return int(min(max_window, base + increment * (step // period)))
