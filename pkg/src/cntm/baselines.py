"""Link predictors sharing one harness contract.

Every predictor sees the same protocol the neural model does: it is
shown the observed links of a graph (describe), told the start node of
each evaluation walk (begin_walk), then queried one condition at a time.
Between queries a predictor carries its own notion of the current node
-- its previous prediction -- because the harness never reveals the true
walk state after the first query.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from cntm import model as M
from cntm.graphs import SymbolCodebook


class LinkPredictor:
    """Interface shared by all predictors; stateless across graphs."""

    name = "base"

    def describe(self, observed_edges, nodes, seed) -> None:
        raise NotImplementedError

    def begin_walk(self, start_node: str) -> None:
        raise NotImplementedError

    def query(self, condition: str) -> str | None:
        """Predict the next node given the environment condition."""
        raise NotImplementedError


class RandomPredictor(LinkPredictor):
    """Uniform draw over the node universe, seeded per graph."""

    name = "random"

    def __init__(self):
        self._nodes = ()
        self._rng = None

    def describe(self, observed_edges, nodes, seed) -> None:
        self._nodes = tuple(nodes)
        self._rng = np.random.default_rng(seed)

    def begin_walk(self, start_node: str) -> None:
        pass

    def query(self, condition: str) -> str:
        return self._nodes[int(self._rng.integers(len(self._nodes)))]


class GraphDistancePredictor(LinkPredictor):
    """Rank candidate targets by shortest-path proximity to the current node.

    Distances are directed breadth-first distances in the observed graph
    with unit link weights; conditions are ignored.  The current node
    itself is not a candidate.  Unreachable candidates score minus
    infinity; ties break toward the lowest node index.  When the current
    node has no outgoing observed links the predictor falls back to a
    seeded uniform draw.
    """

    name = "graph_distance"

    def __init__(self):
        self._nodes = ()
        self._adj: dict[str, list[str]] = {}
        self._rng = None
        self._current: str | None = None
        self._cache: dict[str, str | None] = {}

    def describe(self, observed_edges, nodes, seed) -> None:
        self._nodes = tuple(nodes)
        self._adj = {q: [] for q in nodes}
        for s, _, t in observed_edges:
            self._adj[s].append(t)
        self._rng = np.random.default_rng(seed)
        self._cache = {}

    def begin_walk(self, start_node: str) -> None:
        self._current = start_node

    def _nearest(self, source: str) -> str | None:
        """Closest other node by directed BFS, lowest index on ties."""
        if source in self._cache:
            return self._cache[source]
        index = {q: i for i, q in enumerate(self._nodes)}
        dist = {source: 0}
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for v in self._adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        best = None
        best_key = None
        for q in self._nodes:
            if q == source or q not in dist:
                continue
            key = (dist[q], index[q])
            if best_key is None or key < best_key:
                best, best_key = q, key
        self._cache[source] = best
        return best

    def query(self, condition: str) -> str:
        cur = self._current
        pred = self._nearest(cur) if cur is not None else None
        if pred is None:
            others = [q for q in self._nodes if q != cur]
            pred = others[int(self._rng.integers(len(others)))]
        self._current = pred
        return pred


class NeuralPredictor(LinkPredictor):
    """Adapter running a trained model under the predictor contract.

    The description phase is replayed once per graph in a seeded random
    order; each walk restarts from a snapshot of the post-description
    state.  The first query carries the walk's start node, later queries
    only the condition; the model keeps the current node implicitly in
    its recurrent state.
    """

    def __init__(self, params: M.ModelParams, codebook: SymbolCodebook,
                 nodes: tuple[str, ...], name: str | None = None):
        self.params = params
        self.codebook = codebook
        self.nodes = tuple(nodes)
        self.name = name or ("cntm" if params.config.use_memory else "lstm")
        self._described: M.StepState | None = None
        self._state: M.StepState | None = None
        self._first: str | None = None

    def describe(self, observed_edges, nodes, seed) -> None:
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(observed_edges))
        state = M.initial_state(self.params)
        for i in order:
            s, c, t = observed_edges[int(i)]
            _, state = M.step(M.encode_context(s, c, t, self.codebook),
                              state, self.params, need_probs=False)
        self._described = state

    def begin_walk(self, start_node: str) -> None:
        self._state = self._described.snapshot()
        self._state.projections = self._described.projections
        self._first = start_node

    def query(self, condition: str) -> str | None:
        current, self._first = self._first, None
        pred, self._state = M.predict_transition(
            current, condition, self._state, self.params,
            self.codebook, self.nodes)
        return pred


def random_predictor() -> RandomPredictor:
    return RandomPredictor()


def graph_distance_predictor() -> GraphDistancePredictor:
    return GraphDistancePredictor()


def lstm_baseline(train_config, dataset) -> NeuralPredictor:
    """Train the memory-free ablation and wrap it as a predictor.

    Identical pipeline, encodings, loss and optimizer as the full model;
    only the memory block is absent (the coding U depends on the
    controller alone).
    """
    from cntm import harness
    from dataclasses import replace

    cfg = replace(train_config, model="lstm")
    result = harness.train(cfg, dataset)
    return NeuralPredictor(result.params, dataset.codebook, dataset.nodes,
                           name="lstm")
