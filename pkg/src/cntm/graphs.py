"""Conditional transition graphs: generation, splits, walks, episodes, files.

A conditional graph is a deterministic finite-state structure: nodes Q,
condition symbols C, a transition map delta over (node, condition) pairs,
a start node and a set of final nodes.  The benchmark samples random
graphs, hides 30% of their links, and builds training/evaluation episodes
whose description phase presents the observed links as complete triples
and whose answer phase queries a walk through the observed subgraph.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

CODE_BITS = 30
DEFAULT_CONDITIONS = 10
MAX_OUT_DEGREE = 4


class GraphInvariantError(ValueError):
    """A graph violates the conditional-graph invariants."""


class SplitError(RuntimeError):
    """No valid observed/held-out link split found within the retry budget."""


class DatasetParseError(ValueError):
    """Malformed dataset file; carries the offending line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# core structures


@dataclass(frozen=True)
class ConditionalGraph:
    nodes: tuple[str, ...]
    conditions: tuple[str, ...]
    delta: dict[tuple[str, str], str]
    start: str
    finals: frozenset[str]

    @cached_property
    def edges(self) -> tuple[tuple[str, str, str], ...]:
        """Deterministically ordered (source, condition, target) triples."""
        node_ix = {q: i for i, q in enumerate(self.nodes)}
        cond_ix = {c: i for i, c in enumerate(self.conditions)}
        return tuple(sorted(
            ((s, c, t) for (s, c), t in self.delta.items()),
            key=lambda e: (node_ix[e[0]], cond_ix[e[1]]),
        ))

    @cached_property
    def out_conditions(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {q: [] for q in self.nodes}
        for s, c, _ in self.edges:
            out[s].append(c)
        return {q: tuple(cs) for q, cs in out.items()}

    def reachable(self) -> set[str]:
        seen = {self.start}
        stack = [self.start]
        while stack:
            q = stack.pop()
            for c in self.out_conditions[q]:
                t = self.delta[(q, c)]
                if t not in seen:
                    seen.add(t)
                    stack.append(t)
        return seen

    def validate(self) -> None:
        node_set = set(self.nodes)
        if self.start not in node_set:
            raise GraphInvariantError(f"start node {self.start!r} not in node set")
        if not self.finals <= node_set:
            raise GraphInvariantError("final nodes not a subset of the node set")
        cond_set = set(self.conditions)
        for (s, c), t in self.delta.items():
            if s not in node_set or t not in node_set:
                raise GraphInvariantError(f"transition {s}:{c}->{t} uses unknown node")
            if c not in cond_set:
                raise GraphInvariantError(f"transition {s}:{c}->{t} uses unknown condition")
        for q in self.nodes:
            if q not in self.finals and not self.out_conditions[q]:
                raise GraphInvariantError(f"non-final node {q!r} has no outgoing link")
        missing = set(self.nodes) - self.reachable()
        if missing:
            raise GraphInvariantError(f"nodes unreachable from start: {sorted(missing)}")


@dataclass(frozen=True)
class SymbolCodebook:
    """Fixed binary codes for every symbol; all-zeros means "undefined"."""

    symbols: tuple[str, ...]
    codes: tuple[int, ...]   # CODE_BITS-bit integers, pairwise distinct, nonzero

    def __post_init__(self):
        if len(set(self.codes)) != len(self.codes):
            raise ValueError("codebook codes must be pairwise distinct")
        if any(c == 0 or c >> CODE_BITS for c in self.codes):
            raise ValueError(f"codes must be nonzero {CODE_BITS}-bit integers")

    @cached_property
    def _index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.symbols)}

    @cached_property
    def _vectors(self) -> dict[str, np.ndarray]:
        out = {}
        for s, code in zip(self.symbols, self.codes):
            bits = [(code >> b) & 1 for b in range(CODE_BITS)]
            out[s] = np.array(bits, dtype=np.float64)
        return out

    def encode(self, symbol: str | None) -> np.ndarray:
        """Code vector for a symbol; None encodes as all zeros."""
        if symbol is None:
            return np.zeros(CODE_BITS)
        try:
            return self._vectors[symbol]
        except KeyError:
            raise KeyError(f"symbol {symbol!r} not in codebook") from None

    def decode(self, vector: np.ndarray) -> str | None:
        """Inverse of encode; raises KeyError for unknown code vectors."""
        bits = np.rint(np.asarray(vector)).astype(np.int64)
        code = int(sum(int(b) << i for i, b in enumerate(bits)))
        if code == 0:
            return None
        for s, c in zip(self.symbols, self.codes):
            if c == code:
                return s
        raise KeyError(f"code {code:#x} not in codebook")

    @staticmethod
    def build(symbols, seed) -> "SymbolCodebook":
        """Draw distinct nonzero random codes for the given symbols."""
        symbols = tuple(symbols)
        rng = _rng(seed)
        seen: set[int] = set()
        codes = []
        for _ in symbols:
            while True:
                c = int(rng.integers(1, 1 << CODE_BITS))
                if c not in seen:
                    seen.add(c)
                    codes.append(c)
                    break
        return SymbolCodebook(symbols=symbols, codes=tuple(codes))


@dataclass(frozen=True)
class Environment:
    """Samples the condition input at each node, uniformly by default."""

    graph: ConditionalGraph
    seed: int = 0

    def conditions_at(self, node: str) -> tuple[str, ...]:
        return self.graph.out_conditions[node]

    def sample_condition(self, node: str, rng: np.random.Generator) -> str:
        cs = self.graph.out_conditions[node]
        if not cs:
            raise ValueError(f"node {node!r} has no outgoing conditions")
        return cs[int(rng.integers(len(cs)))]


@dataclass(frozen=True)
class LinkSplit:
    """Partition of a graph's links into observed (70%) and held-out."""

    graph: ConditionalGraph
    observed: tuple[int, ...]   # indices into graph.edges
    held_out: tuple[int, ...]

    def observed_edges(self) -> tuple[tuple[str, str, str], ...]:
        edges = self.graph.edges
        return tuple(edges[i] for i in self.observed)

    def held_out_edges(self) -> tuple[tuple[str, str, str], ...]:
        edges = self.graph.edges
        return tuple(edges[i] for i in self.held_out)

    @cached_property
    def observed_graph(self) -> ConditionalGraph:
        g = self.graph
        delta = {(s, c): t for s, c, t in self.observed_edges()}
        return ConditionalGraph(nodes=g.nodes, conditions=g.conditions,
                                delta=delta, start=g.start, finals=g.finals)


@dataclass(frozen=True)
class Episode:
    """One presentation of a graph: description triples then a query walk.

    The answer-phase mask is 0 on every description step and 1 on every
    query step; targets line up with the query conditions.
    """

    description: tuple[tuple[str, str, str], ...]
    first_node: str
    query_conditions: tuple[str, ...]
    targets: tuple[str, ...]

    @property
    def mask(self) -> np.ndarray:
        return np.concatenate([
            np.zeros(len(self.description)),
            np.ones(len(self.query_conditions)),
        ])

    def __len__(self) -> int:
        return len(self.description) + len(self.query_conditions)


@dataclass
class Dataset:
    """A codebook plus a list of split graphs sharing one symbol space."""

    nodes: tuple[str, ...]
    conditions: tuple[str, ...]
    codebook: SymbolCodebook
    entries: tuple[LinkSplit, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.entries)


# ---------------------------------------------------------------------------
# generation


def generate_random_graph(num_nodes: int, seed, *,
                          n_conditions: int = DEFAULT_CONDITIONS,
                          max_out_degree: int = MAX_OUT_DEGREE) -> ConditionalGraph:
    """Sample a random conditional graph.

    Out-degrees are drawn uniformly from [1, min(max_out_degree,
    num_nodes - 1)], each link gets a distinct condition at its source,
    targets are uniform.  Unreachable nodes are repaired by drawing them
    a new incoming link from an already reachable node (using one of the
    source's spare conditions), which keeps the repair monotone.  Exactly
    one final node is chosen among the non-start nodes.
    """
    if num_nodes < 2:
        raise ValueError("a conditional graph needs at least 2 nodes")
    rng = _rng(seed)
    nodes = tuple(f"n{i}" for i in range(num_nodes))
    conditions = tuple(f"c{i}" for i in range(n_conditions))
    hi = min(max_out_degree, num_nodes - 1)

    delta: dict[tuple[str, str], str] = {}
    used: dict[str, set[str]] = {q: set() for q in nodes}
    for q in nodes:
        degree = int(rng.integers(1, hi + 1))
        picks = rng.choice(n_conditions, size=degree, replace=False)
        for ci in sorted(int(i) for i in picks):
            c = conditions[ci]
            delta[(q, c)] = nodes[int(rng.integers(num_nodes))]
            used[q].add(c)

    start = nodes[0]

    def reachable_from_start():
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for (s, c), t in list(delta.items()):
                if s == u and t not in seen:
                    seen.add(t)
                    stack.append(t)
        return seen

    seen = reachable_from_start()
    while len(seen) < num_nodes:
        u = next(q for q in nodes if q not in seen)
        donors = [q for q in sorted(seen) if len(used[q]) < n_conditions]
        v = donors[int(rng.integers(len(donors)))]
        spare = [c for c in conditions if c not in used[v]]
        c = spare[int(rng.integers(len(spare)))]
        delta[(v, c)] = u
        used[v].add(c)
        seen = reachable_from_start()

    final = nodes[1 + int(rng.integers(num_nodes - 1))]
    g = ConditionalGraph(nodes=nodes, conditions=conditions, delta=delta,
                         start=start, finals=frozenset({final}))
    g.validate()
    return g


def split_links(g: ConditionalGraph, fraction: float = 0.7, seed=0, *,
                max_tries: int = 500) -> LinkSplit:
    """Mark a fraction of links observed so that the observed subgraph is
    itself a valid conditional graph (reachable, no dead ends)."""
    edges = g.edges
    n_obs = int(round(fraction * len(edges)))
    rng = _rng(seed)
    for _ in range(max_tries):
        perm = rng.permutation(len(edges))
        observed = tuple(sorted(int(i) for i in perm[:n_obs]))
        held = tuple(sorted(int(i) for i in perm[n_obs:]))
        split = LinkSplit(graph=g, observed=observed, held_out=held)
        try:
            split.observed_graph.validate()
        except GraphInvariantError:
            continue
        return split
    raise SplitError(
        f"no valid {fraction:.0%} split of {len(edges)} links in {max_tries} tries"
    )


def sample_walk(g: ConditionalGraph, env: Environment, length: int, seed
                ) -> list[tuple[str, str, str]]:
    """Walk from the start node, sampling conditions from the environment;
    stops early on reaching a final node."""
    if length < 1:
        raise ValueError("walk length must be >= 1")
    rng = _rng(seed)
    walk = []
    node = g.start
    for _ in range(length):
        if node in g.finals:
            break
        c = env.sample_condition(node, rng)
        nxt = g.delta[(node, c)]
        walk.append((node, c, nxt))
        node = nxt
    return walk


def build_episode(split: LinkSplit, env: Environment | None,
                  walk_length: int, seed) -> Episode:
    """Assemble description and answer phases for one split graph.

    The description presents the observed links as complete triples in a
    fresh random order.  The answer phase is a walk through the observed
    subgraph: the first query carries the walk's start node, later
    queries only the sampled condition; targets are the walk's next
    nodes (and therefore consistent with the full graph's transitions).
    """
    rng = _rng(seed)
    obs = split.observed_graph
    if env is None:
        env = Environment(graph=obs)
    order = rng.permutation(len(split.observed))
    observed = split.observed_edges()
    description = tuple(observed[int(i)] for i in order)
    walk = sample_walk(obs, env, walk_length, rng)
    if not walk:
        raise ValueError("cannot build an episode: the start node is final")
    return Episode(
        description=description,
        first_node=walk[0][0],
        query_conditions=tuple(c for _, c, _ in walk),
        targets=tuple(t for _, _, t in walk),
    )


def generate_dataset(num_nodes: int, count: int, seed: int, *,
                     n_conditions: int = DEFAULT_CONDITIONS,
                     fraction: float = 0.7,
                     max_out_degree: int = MAX_OUT_DEGREE) -> Dataset:
    """Generate ``count`` split graphs over one shared codebook.

    Deterministic in all arguments; the stream depends on (seed,
    num_nodes) only, so a smaller dataset is an exact prefix of a larger
    one with the same seed, sharing its codebook.  A graph whose link
    split fails the validity constraints is redrawn from a fresh
    substream (bounded).
    """
    root = np.random.SeedSequence(entropy=(seed, num_nodes))
    code_ss, graph_ss = root.spawn(2)
    nodes = tuple(f"n{i}" for i in range(num_nodes))
    conditions = tuple(f"c{i}" for i in range(n_conditions))
    codebook = SymbolCodebook.build(nodes + conditions, np.random.default_rng(code_ss))

    entries = []
    streams = graph_ss.spawn(count)
    for i in range(count):
        attempts = streams[i].spawn(64)
        for attempt in attempts:
            g_rng, s_rng = (np.random.default_rng(s) for s in attempt.spawn(2))
            g = generate_random_graph(num_nodes, g_rng,
                                      n_conditions=n_conditions,
                                      max_out_degree=max_out_degree)
            try:
                entries.append(split_links(g, fraction, s_rng))
                break
            except SplitError:
                continue
        else:
            raise SplitError(f"could not split any candidate for graph {i}")
    return Dataset(nodes=nodes, conditions=conditions, codebook=codebook,
                   entries=tuple(entries))


# ---------------------------------------------------------------------------
# persistence

_HEADER = "#cntm-dataset v1"


def _codebook_field(cb: SymbolCodebook) -> str:
    return ",".join(f"{s}={c:08x}" for s, c in zip(cb.symbols, cb.codes))


def _graph_line(gid: int, split: LinkSplit, cb: SymbolCodebook) -> str:
    g = split.graph
    fields = [
        str(gid),
        ",".join(g.nodes),
        ",".join(g.conditions),
        ",".join(f"{s}:{c}:{t}" for s, c, t in g.edges),
        g.start,
        ",".join(sorted(g.finals)),
        ",".join(str(i) for i in split.observed),
        _codebook_field(cb),
    ]
    body = "\t".join(fields)
    return f"{body}\t{zlib.crc32(body.encode()):08x}"


def save_dataset(dataset: Dataset, path) -> None:
    lines = [_HEADER]
    for gid, split in enumerate(dataset.entries):
        lines.append(_graph_line(gid, split, dataset.codebook))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_graph_line(lineno: int, line: str) -> tuple[int, LinkSplit, SymbolCodebook]:
    fields = line.split("\t")
    if len(fields) != 9:
        raise DatasetParseError(lineno, f"expected 9 fields, found {len(fields)}")
    body = "\t".join(fields[:8])
    if f"{zlib.crc32(body.encode()):08x}" != fields[8]:
        raise DatasetParseError(lineno, "checksum mismatch")
    try:
        gid = int(fields[0])
        nodes = tuple(fields[1].split(","))
        conditions = tuple(fields[2].split(","))
        delta = {}
        for part in fields[3].split(","):
            s, c, t = part.split(":")
            if (s, c) in delta:
                raise DatasetParseError(lineno, f"duplicate transition {s}:{c}")
            delta[(s, c)] = t
        start = fields[4]
        finals = frozenset(fields[5].split(","))
        observed = tuple(int(i) for i in fields[6].split(",")) if fields[6] else ()
        symbols, codes = [], []
        for part in fields[7].split(","):
            sym, hexcode = part.split("=")
            symbols.append(sym)
            codes.append(int(hexcode, 16))
        codebook = SymbolCodebook(symbols=tuple(symbols), codes=tuple(codes))
    except DatasetParseError:
        raise
    except (ValueError, KeyError) as exc:
        raise DatasetParseError(lineno, f"malformed record: {exc}") from exc
    graph = ConditionalGraph(nodes=nodes, conditions=conditions, delta=delta,
                             start=start, finals=finals)
    try:
        graph.validate()
    except GraphInvariantError as exc:
        raise DatasetParseError(lineno, str(exc)) from exc
    n_edges = len(graph.edges)
    if any(i < 0 or i >= n_edges for i in observed):
        raise DatasetParseError(lineno, "observed link index out of range")
    held = tuple(i for i in range(n_edges) if i not in set(observed))
    return gid, LinkSplit(graph=graph, observed=observed, held_out=held), codebook


def load_dataset(path) -> Dataset:
    """Parse a dataset file; any malformed line aborts the whole load."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read()
    lines = raw.split("\n")
    if not lines or lines[0] != _HEADER:
        raise DatasetParseError(1, f"missing header {_HEADER!r}")
    if raw and not raw.endswith("\n"):
        raise DatasetParseError(len(lines), "truncated file (no final newline)")
    entries = []
    codebook = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        gid, split, cb = _parse_graph_line(lineno, line)
        if codebook is None:
            codebook = cb
        elif cb != codebook:
            raise DatasetParseError(lineno, "codebook differs between records")
        if entries and (split.graph.nodes != entries[0].graph.nodes
                        or split.graph.conditions != entries[0].graph.conditions):
            raise DatasetParseError(lineno, "symbol universe differs between records")
        if gid != len(entries):
            raise DatasetParseError(lineno, f"record id {gid} out of order")
        entries.append(split)
    if codebook is None:
        raise DatasetParseError(1, "dataset contains no graphs")
    first = entries[0].graph
    return Dataset(nodes=first.nodes, conditions=first.conditions,
                   codebook=codebook, entries=tuple(entries))
