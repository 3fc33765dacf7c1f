"""Candidate-step similarity matrix and disjoint alignment by greedy pooling.

The similarity matrix S is 4 x N: cosine scores between the four candidate
answer representations (rows) and the question-conditioned step
representations (columns). Constrained max-pooling repeatedly takes the
global maximum of the remaining matrix and deletes its row and column, so
the four selected steps are pairwise distinct. Selection indices are frozen
(no gradient through the argmax); the selected scores stay differentiable
with respect to S.

Tie-breaking everywhere: lowest row index first, then lowest column index.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, ShapeError, Tensor
from .encoders import MlpParams, mlp_project

NUM_CANDIDATES = 4
ZERO_NORM_EPS = 1e-12


def cosine(g: Graph, u: Tensor, v: Tensor) -> Tensor:
    """Differentiable cosine similarity of two vectors; rejects zero norms.

    A zero-norm representation signals dead parameters, so it fails loudly
    instead of silently scoring 0.
    """
    ud, vd = u.data, v.data
    if ud.ndim != 1 or vd.ndim != 1 or ud.shape != vd.shape:
        raise ShapeError(f"cosine: expected equal-length vectors, got {ud.shape} and {vd.shape}")
    nu = float(np.linalg.norm(ud))
    nv = float(np.linalg.norm(vd))
    if nu < ZERO_NORM_EPS or nv < ZERO_NORM_EPS:
        raise ValueError(f"cosine: zero-norm input (norms {nu:.3e}, {nv:.3e})")
    value = float(ud @ vd) / (nu * nv)

    def bwd(gout):
        s = float(gout)
        du = s * (vd / (nu * nv) - value * ud / (nu * nu))
        dv = s * (ud / (nu * nv) - value * vd / (nv * nv))
        return du, dv

    return g.record("cosine", (u, v), np.asarray(value), bwd)


@dataclass
class SimilarityMatrix:
    """4 x N cosine scores; ``scores`` is the differentiable tensor."""

    scores: Tensor

    def __post_init__(self):
        if self.scores.data.ndim != 2 or self.scores.shape[0] != NUM_CANDIDATES:
            raise ShapeError(
                f"SimilarityMatrix: expected {NUM_CANDIDATES} x N scores, got {self.scores.shape}"
            )

    @property
    def num_steps(self) -> int:
        return self.scores.shape[1]

    @property
    def values(self) -> np.ndarray:
        return self.scores.data


@dataclass
class AlignmentResult:
    """Step assignment per candidate plus the selected scores m.

    ``pick_order`` records the greedy selection order (candidate indices);
    read in that order the selected scores are non-increasing. In row-max
    mode assignments may repeat and pick_order is by descending score.
    """

    assignments: tuple
    selected: tuple
    pick_order: tuple
    source: SimilarityMatrix = field(repr=False)

    @property
    def m(self) -> np.ndarray:
        return np.array(self.selected)


def build_similarity_matrix(
    g: Graph,
    candidate_reps,
    step_reps,
    question_rep,
    projection: MlpParams,
) -> SimilarityMatrix:
    """S[i][j] = cosine(candidate_i, MLP(concat(step_j, question))).

    ``question_rep`` may be None for a question-free matrix (projection
    input is then the step representation alone).
    """
    candidate_reps = list(candidate_reps)
    step_reps = list(step_reps)
    if len(candidate_reps) != NUM_CANDIDATES:
        raise ShapeError(
            f"build_similarity_matrix: expected {NUM_CANDIDATES} candidates, got {len(candidate_reps)}"
        )
    if not step_reps:
        raise ShapeError("build_similarity_matrix: need at least one step")
    rows = []
    projected = []
    for step in step_reps:
        fused = step if question_rep is None else g.concat(step, question_rep)
        projected.append(mlp_project(g, projection, fused))
    for cand in candidate_reps:
        rows.append(g.stack_scalars([cosine(g, cand, p) for p in projected]))
    return SimilarityMatrix(g.stack_rows(rows))


def _require_pool_shape(s: SimilarityMatrix) -> np.ndarray:
    values = s.values
    if not np.isfinite(values).all():
        raise ValueError("constrained_max_pool: similarity matrix has non-finite entries")
    if s.num_steps < NUM_CANDIDATES:
        raise ValueError(
            f"constrained_max_pool: need at least {NUM_CANDIDATES} steps, got N={s.num_steps}"
        )
    return values


def constrained_max_pool(s: SimilarityMatrix) -> AlignmentResult:
    """Greedy disjoint alignment: global max, delete its row and column, repeat.

    np.argmax on the row-major masked matrix realizes the tie-break rule
    (lowest row, then lowest column) exactly.
    """
    values = _require_pool_shape(s)
    work = values.astype(np.float64, copy=True)
    assignments = [-1] * NUM_CANDIDATES
    pick_order = []
    for _ in range(NUM_CANDIDATES):
        flat = int(np.argmax(work))
        row, col = divmod(flat, work.shape[1])
        assignments[row] = col
        pick_order.append(row)
        work[row, :] = -np.inf
        work[:, col] = -np.inf
    selected = tuple(float(values[c, assignments[c]]) for c in range(NUM_CANDIDATES))
    return AlignmentResult(tuple(assignments), selected, tuple(pick_order), s)


def row_max_pool(s: SimilarityMatrix) -> AlignmentResult:
    """Per-row argmax; duplicate step assignments allowed (ablation mode)."""
    values = s.values
    if not np.isfinite(values).all():
        raise ValueError("row_max_pool: similarity matrix has non-finite entries")
    assignments = tuple(int(np.argmax(values[c])) for c in range(NUM_CANDIDATES))
    selected = tuple(float(values[c, assignments[c]]) for c in range(NUM_CANDIDATES))
    pick_order = tuple(sorted(range(NUM_CANDIDATES), key=lambda c: (-selected[c], c)))
    return AlignmentResult(assignments, selected, pick_order, s)


def greedy_trace_oracle(s: SimilarityMatrix) -> AlignmentResult:
    """Deliberately naive re-implementation of the greedy procedure.

    Explicit used-row/used-column masks and a full rescan per round; used in
    tests as the independent oracle, and must match constrained_max_pool
    exactly, ties included.
    """
    values = _require_pool_shape(s)
    num_rows, num_cols = values.shape
    row_used = [False] * num_rows
    col_used = [False] * num_cols
    assignments = [-1] * NUM_CANDIDATES
    pick_order = []
    for _ in range(NUM_CANDIDATES):
        best = None
        best_row = best_col = -1
        for r in range(num_rows):
            if row_used[r]:
                continue
            for c in range(num_cols):
                if col_used[c]:
                    continue
                score = float(values[r, c])
                if best is None or score > best:
                    best = score
                    best_row, best_col = r, c
        row_used[best_row] = True
        col_used[best_col] = True
        assignments[best_row] = best_col
        pick_order.append(best_row)
    selected = tuple(float(values[c, assignments[c]]) for c in range(NUM_CANDIDATES))
    return AlignmentResult(tuple(assignments), selected, tuple(pick_order), s)


def optimal_assignment(s: SimilarityMatrix):
    """Exhaustive best injective assignment of the 4 candidates to distinct steps.

    Diagnostics only (greedy is not claimed optimal): returns the assignment
    tuple and its total score. Guarded against combinatorial blowup.
    """
    values = _require_pool_shape(s)
    n = s.num_steps
    if n > 16:
        raise ValueError(f"optimal_assignment: N={n} exceeds the exhaustive-search guard (16)")
    best_total = -np.inf
    best = None
    for perm in itertools.permutations(range(n), NUM_CANDIDATES):
        total = float(values[0, perm[0]] + values[1, perm[1]] + values[2, perm[2]] + values[3, perm[3]])
        if total > best_total:
            best_total = total
            best = perm
    return tuple(best), best_total
