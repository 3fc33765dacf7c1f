"""Constrained max-pooling versus plain row maxima on a conflict matrix.

The matrix below makes candidates 0 and 1 both want step 0. Row-max lets
them share it; the constrained greedy procedure gives step 0 to the
stronger row and forces the other onto its best remaining column. The
exhaustive oracle shows the greedy total is not always optimal.
"""

import numpy as np

from stepalign import (
    SimilarityMatrix,
    Tensor,
    constrained_max_pool,
    optimal_assignment,
    row_max_pool,
)

conflict = np.array(
    [
        [0.90, 0.80, 0.10, 0.10],
        [0.85, 0.10, 0.10, 0.10],
        [0.10, 0.10, 0.70, 0.10],
        [0.10, 0.10, 0.10, 0.60],
    ]
)

s = SimilarityMatrix(Tensor(conflict))
print("similarity matrix:")
print(conflict)

greedy = constrained_max_pool(s)
print("\nconstrained greedy:")
print("  assignments:", greedy.assignments, "(pairwise distinct)")
print("  m:", greedy.selected)
print("  pick order:", greedy.pick_order, "-> candidate 1 was forced off column 0")

rowmax = row_max_pool(s)
print("\nrow-max (ablation mode):")
print("  assignments:", rowmax.assignments, "(note the duplicate column 0)")
print("  m:", rowmax.selected)

best, total = optimal_assignment(s)
print("\nexhaustive best assignment:", best, f"total={total:.2f}")
print(f"greedy total: {sum(greedy.selected):.2f}  (greedy is deliberately myopic)")
