"""Root cause attribution of outliers on causal DAGs.

Fits functional causal models to normal observations, learns per-node
noise score models, and explains a leaf outlier by integrating score
gradients along reverse-time diffusion trajectories. Ships five baseline
attributors, three synthetic benchmark suites, and an NDCG@k harness.
"""

from .graph import Dag, ancestors, random_dag, select_rooted_subgraph, topological_sort

__all__ = [
    "Dag",
    "ancestors",
    "random_dag",
    "select_rooted_subgraph",
    "topological_sort",
]

__version__ = "0.1.0"
