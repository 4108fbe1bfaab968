"""Causal DAGs and the backdoor criterion.

The structural model behind the sentiment-adjustment pipeline is a small
directed acyclic graph over named variables (target features, predictions,
confounding factors).  This module represents such graphs explicitly and
decides whether a candidate adjustment set satisfies the backdoor criterion:

1. the set blocks every undirected path from treatment to outcome whose
   first edge points into the treatment, under the standard d-separation
   blocking rules (a non-collider on the path blocks when it is in the set;
   a collider blocks unless itself or one of its descendants is in the set);
2. no member of the set is a descendant of the treatment.

The decision procedure for condition 1 is a Bayes-ball style reachability
pass over the graph with the treatment's outgoing edges removed, so it runs
in linear time instead of enumerating paths.  Path enumeration is used only
to name the offending path in a violation report.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .errors import CycleError, UnknownNodeError

__all__ = [
    "CausalDag",
    "BackdoorQuery",
    "BackdoorResult",
    "build_dag",
    "descendants",
    "ancestors",
    "satisfies_backdoor",
    "parse_edge_list",
    "format_edge_list",
    "FIGURE_SCM",
]


@dataclass(frozen=True)
class CausalDag:
    """Immutable DAG over named variables.

    Unobserved noise inputs are deliberately not nodes: each one has a single
    child, so it can never open a backdoor path, and keeping the graph over
    observed variables only matches how the criterion is used downstream.
    """

    nodes: frozenset[str]
    edges: frozenset[tuple[str, str]]

    def parents(self, node: str) -> set[str]:
        self._require(node)
        return {a for (a, b) in self.edges if b == node}

    def children(self, node: str) -> set[str]:
        self._require(node)
        return {b for (a, b) in self.edges if a == node}

    def _require(self, node: str) -> None:
        if node not in self.nodes:
            raise UnknownNodeError(f"unknown node {node!r}")


@dataclass(frozen=True)
class BackdoorQuery:
    """A (treatment, outcome, adjustment set) triple to check."""

    treatment: str
    outcome: str
    adjustment_set: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        object.__setattr__(self, "adjustment_set", frozenset(self.adjustment_set))
        if self.treatment == self.outcome:
            raise ValueError("treatment and outcome must differ")
        if self.treatment in self.adjustment_set or self.outcome in self.adjustment_set:
            raise ValueError("treatment/outcome cannot be part of the adjustment set")


@dataclass(frozen=True)
class BackdoorResult:
    """Outcome of a backdoor check.

    When the criterion fails, exactly one of ``offending_path`` and
    ``offending_descendant`` is set and ``reason`` says which rule broke.
    """

    holds: bool
    reason: str = ""
    offending_path: tuple[str, ...] | None = None
    offending_descendant: str | None = None

    def __bool__(self) -> bool:
        return self.holds


def build_dag(nodes: list[str], edges: list[tuple[str, str]]) -> CausalDag:
    """Validate and freeze a DAG.

    Raises UnknownNodeError for dangling edge endpoints and CycleError when
    the edges admit a directed cycle (self-edges included).
    """
    if len(set(nodes)) != len(nodes):
        raise ValueError("node names must be unique")
    if any(not n for n in nodes):
        raise ValueError("node names must be non-empty")
    node_set = frozenset(nodes)
    for a, b in edges:
        if a not in node_set:
            raise UnknownNodeError(f"edge endpoint {a!r} is not a declared node")
        if b not in node_set:
            raise UnknownNodeError(f"edge endpoint {b!r} is not a declared node")
        if a == b:
            raise CycleError(f"self-edge on {a!r}")
    edge_set = frozenset(edges)

    # Kahn's algorithm; leftovers mean a cycle.
    indeg = {n: 0 for n in node_set}
    for _, b in edge_set:
        indeg[b] += 1
    ready = deque(sorted(n for n, d in indeg.items() if d == 0))
    seen = 0
    children = {n: [] for n in node_set}
    for a, b in edge_set:
        children[a].append(b)
    while ready:
        n = ready.popleft()
        seen += 1
        for c in children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    if seen != len(node_set):
        cyclic = sorted(n for n, d in indeg.items() if d > 0)
        raise CycleError(f"edges form a cycle through {', '.join(cyclic)}")
    return CausalDag(nodes=node_set, edges=edge_set)


#: The three-variable graph used throughout: a confounder with arrows into
#: both the target feature and the prediction, plus the direct effect.
FIGURE_SCM = build_dag(["C", "X", "Y"], [("C", "X"), ("C", "Y"), ("X", "Y")])


def descendants(dag: CausalDag, node: str) -> set[str]:
    """All nodes reachable from ``node`` by one or more directed edges."""
    dag._require(node)
    out: set[str] = set()
    frontier = deque([node])
    while frontier:
        for c in dag.children(frontier.popleft()):
            if c not in out:
                out.add(c)
                frontier.append(c)
    return out


def ancestors(dag: CausalDag, node: str) -> set[str]:
    """All nodes from which ``node`` is reachable by directed edges."""
    dag._require(node)
    out: set[str] = set()
    frontier = deque([node])
    while frontier:
        for p in dag.parents(frontier.popleft()):
            if p not in out:
                out.add(p)
                frontier.append(p)
    return out


def satisfies_backdoor(dag: CausalDag, query: BackdoorQuery) -> BackdoorResult:
    """Decide the backdoor criterion for ``query`` on ``dag``.

    Deterministic: the violation report names the lexicographically first
    offending adjustment-set member (condition 2) or the lexicographically
    first unblocked backdoor path (condition 1).
    """
    x, y, s = query.treatment, query.outcome, query.adjustment_set
    for n in (x, y, *sorted(s)):
        dag._require(n)

    # Condition 2 first: it is cheap, and with it out of the way the
    # reachability pass below cannot be confused by open colliders at or
    # below the treatment.
    desc_x = descendants(dag, x)
    bad = sorted(s & desc_x)
    if bad:
        return BackdoorResult(
            holds=False,
            reason=f"{bad[0]} is a descendant of {x}",
            offending_descendant=bad[0],
        )

    if _open_backdoor_exists(dag, x, y, s):
        path = _first_open_backdoor_path(dag, x, y, s)
        if path is None:  # pragma: no cover - decision and report disagree
            raise AssertionError("reachability found an open path but enumeration did not")
        return BackdoorResult(
            holds=False,
            reason=f"unblocked backdoor path {_format_path(dag, path)}",
            offending_path=path,
        )
    return BackdoorResult(holds=True)


def _open_backdoor_exists(dag: CausalDag, x: str, y: str, s: frozenset[str]) -> bool:
    """Reachability test for an unblocked path leaving ``x`` against an edge.

    Works in the graph with x's outgoing edges removed, where every simple
    path from x starts with an edge into x.  States are (node, arrived_in)
    where arrived_in says whether the edge we arrived by points into the
    node; the collider/non-collider transit rules decide expansion.
    """
    parents = {n: sorted(dag.parents(n)) for n in dag.nodes}
    children = {n: sorted(c for c in dag.children(n) if n != x) for n in dag.nodes}

    # A collider is open when it or one of its descendants is conditioned on.
    open_collider = {n for n in dag.nodes if n in s or (descendants(dag, n) & s)}

    queue: deque[tuple[str, bool]] = deque((p, False) for p in parents[x])
    visited: set[tuple[str, bool]] = set(queue)
    while queue:
        node, arrived_in = queue.popleft()
        if node == y:
            return True
        moves: list[tuple[str, bool]] = []
        if node not in s:  # chain or fork through node
            moves.extend((c, True) for c in children[node])
        if arrived_in:
            if node in open_collider:
                moves.extend((p, False) for p in parents[node])
        elif node not in s:
            moves.extend((p, False) for p in parents[node])
        for state in moves:
            if state not in visited:
                visited.add(state)
                queue.append(state)
    return False


def _first_open_backdoor_path(
    dag: CausalDag, x: str, y: str, s: frozenset[str]
) -> tuple[str, ...] | None:
    """Lexicographically first unblocked backdoor path, for reporting."""
    open_collider = {n for n in dag.nodes if n in s or (descendants(dag, n) & s)}
    neighbors = {
        n: sorted(dag.parents(n) | dag.children(n)) for n in dag.nodes
    }

    def blocked_at(prev: str, node: str, nxt: str) -> bool:
        is_collider = (prev, node) in dag.edges and (nxt, node) in dag.edges
        if is_collider:
            return node not in open_collider
        return node in s

    def walk(path: list[str], visited: set[str]) -> tuple[str, ...] | None:
        node = path[-1]
        if node == y:
            return tuple(path)
        for nxt in neighbors[node]:
            if nxt in visited:
                continue
            if len(path) >= 2 and blocked_at(path[-2], node, nxt):
                continue
            found = walk(path + [nxt], visited | {nxt})
            if found is not None:
                return found
        return None

    for p in sorted(dag.parents(x)):  # backdoor paths start against an edge into x
        found = walk([x, p], {x, p})
        if found is not None:
            return found
    return None


def _format_path(dag: CausalDag, path: tuple[str, ...]) -> str:
    parts = [path[0]]
    for a, b in zip(path, path[1:]):
        parts.append(" -> " if (a, b) in dag.edges else " <- ")
        parts.append(b)
    return "".join(parts)


def parse_edge_list(text: str) -> CausalDag:
    """Build a DAG from plain text: one ``A -> B`` per line.

    ``#`` starts a comment; a bare name on a line declares an isolated node.
    """
    nodes: list[str] = []
    edges: list[tuple[str, str]] = []

    def add_node(name: str) -> None:
        if name not in nodes:
            nodes.append(name)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" in line:
            left, _, right = line.partition("->")
            a, b = left.strip(), right.strip()
            if not a or not b:
                raise ValueError(f"line {lineno}: malformed edge {raw!r}")
            add_node(a)
            add_node(b)
            edges.append((a, b))
        else:
            if any(ch.isspace() for ch in line):
                raise ValueError(f"line {lineno}: malformed line {raw!r}")
            add_node(line)
    return build_dag(nodes, edges)


def format_edge_list(dag: CausalDag) -> str:
    """Inverse of :func:`parse_edge_list` (modulo comments)."""
    lines = [f"{a} -> {b}" for a, b in sorted(dag.edges)]
    linked = {n for e in dag.edges for n in e}
    lines.extend(sorted(dag.nodes - linked))
    return "\n".join(lines) + "\n"
