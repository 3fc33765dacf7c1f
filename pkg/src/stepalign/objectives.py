"""The two hinge training objectives on the similarity matrix, and inference.

Both losses read entries of S at the alignment's frozen step indices;
gradients flow into those entries only. With answer index a and the
alignment (i_1..i_4, m):

  objective 1: max(0, S[r,i_r] - S[a,i_a] + margin)
               + sum over c != a of max(0, S[c,i_a] - S[a,i_a] + margin)
  objective 2: (1 - S[a,i_a]) + sum over c != a of max(0, S[c,i_c] - margin)

where r is a random wrong candidate. The second term of objective 1 reads
column i_a from the raw matrix even when that column was deleted before
candidate c's greedy turn: the formula indexes S directly, not m.

Inference: the predicted answer is the argmax over m (ties to the lower
candidate index); the ranking sorts candidates by m descending.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import NUM_CANDIDATES, AlignmentResult, SimilarityMatrix
from .autodiff import Graph, Tensor

DEFAULT_MARGIN = 0.1


@dataclass
class ObjectiveConfig:
    margin: float = DEFAULT_MARGIN
    objective_kind: str = "obj1"
    rng_seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError(f"ObjectiveConfig: margin must be positive, got {self.margin}")
        if self.objective_kind not in ("obj1", "obj2"):
            raise ValueError(f"ObjectiveConfig: unknown objective_kind '{self.objective_kind}'")


def _check_pair(s: SimilarityMatrix, align: AlignmentResult, answer: int) -> None:
    if align.source is not s:
        raise ValueError("objective: alignment was not produced from this similarity matrix")
    if not 0 <= answer < NUM_CANDIDATES:
        raise ValueError(f"objective: answer index {answer} out of range [0, {NUM_CANDIDATES})")


def _hinge(g: Graph, x: Tensor, shift: float) -> Tensor:
    return g.relu_hinge(g.add(x, Tensor(np.asarray(shift))))


def loss_obj1(
    g: Graph,
    s: SimilarityMatrix,
    align: AlignmentResult,
    answer: int,
    r: int,
    margin: float = DEFAULT_MARGIN,
) -> Tensor:
    """Ranking hinge vs one random wrong candidate, plus the i_a column hinges."""
    _check_pair(s, align, answer)
    if not 0 <= r < NUM_CANDIDATES:
        raise ValueError(f"loss_obj1: r index {r} out of range [0, {NUM_CANDIDATES})")
    if r == answer:
        raise ValueError(f"loss_obj1: r must differ from the answer index {answer}")
    i_a = align.assignments[answer]
    s_a = g.pick(s.scores, answer, i_a)
    s_r = g.pick(s.scores, r, align.assignments[r])
    loss = _hinge(g, g.sub(s_r, s_a), margin)
    for c in range(NUM_CANDIDATES):
        if c == answer:
            continue
        loss = g.add(loss, _hinge(g, g.sub(g.pick(s.scores, c, i_a), s_a), margin))
    return loss


def loss_obj2(
    g: Graph,
    s: SimilarityMatrix,
    align: AlignmentResult,
    answer: int,
    margin: float = DEFAULT_MARGIN,
) -> Tensor:
    """Pull the answer's selected score to 1; push the others below the margin."""
    _check_pair(s, align, answer)
    s_a = g.pick(s.scores, answer, align.assignments[answer])
    loss = g.add(g.scalar_mul(s_a, -1.0), Tensor(np.asarray(1.0)))
    for c in range(NUM_CANDIDATES):
        if c == answer:
            continue
        s_c = g.pick(s.scores, c, align.assignments[c])
        loss = g.add(loss, _hinge(g, s_c, -margin))
    return loss


def sample_wrong_candidate(answer: int, rng: np.random.Generator) -> int:
    """Uniform over the three non-answer candidate indices."""
    if not 0 <= answer < NUM_CANDIDATES:
        raise ValueError(f"sample_wrong_candidate: answer {answer} out of range")
    wrong = [c for c in range(NUM_CANDIDATES) if c != answer]
    return wrong[int(rng.integers(0, len(wrong)))]


def predict(align: AlignmentResult):
    """(predicted index, full ranking) by descending m, ties to lower index."""
    ranking = tuple(sorted(range(NUM_CANDIDATES), key=lambda c: (-align.selected[c], c)))
    return ranking[0], ranking
