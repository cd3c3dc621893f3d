"""Graph-based PMU ordering.

Builds the correlation graph over a dataset, orders PMUs by the Fiedler
vector, and shows that the reordered weight matrix is banded.
"""
import numpy as np

from pmu_events import synth
from pmu_events.core import EventClass
from pmu_events.gsp import apply_order, build_graph, pairwise_correlation, permute_weights, sort_pmus

grid = synth.gen_grid(12, 0.3, seed=2)
tensors = synth.gen_dataset(grid, {c.name: 3 for c in EventClass}, window_s=8.0, seed=3)

W = np.abs(pairwise_correlation(tensors))
np.fill_diagonal(W, 0.0)
ordering, _ = sort_pmus(tensors)
print("fiedler value:", round(ordering.lambda2, 5))
print("order:", ordering.permutation.tolist())


def bandedness(M):
    # mean |i - j| weighted by edge weight; lower means mass sits near the diagonal
    i, j = np.indices(M.shape)
    return float((M * np.abs(i - j)).sum() / M.sum())


print("weighted bandwidth before:", round(bandedness(W), 3))
print("weighted bandwidth after: ", round(bandedness(permute_weights(W, ordering)), 3))

# Grid coordinates along the ordering should move smoothly.
print("sorted PMU x-coordinates:", np.round(grid.positions[ordering.permutation, 0], 2).tolist())
sorted_t = apply_order(tensors[0], ordering)
print("first tensor pmu_ids now:", sorted_t.pmu_ids[:4], "...")
graph = build_graph(W)
print("laplacian rows sum to zero:", bool(np.allclose(graph.laplacian.sum(axis=1), 0)))
