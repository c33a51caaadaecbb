"""State-space graph ingestion.

Parses the DOT subset that model-checker dumps use (node and edge statements
with optional label attributes), deduplicates repeated statements, and builds
a validated dense-index graph with a synthetic super-final sink so that every
final state funnels into a single traversal target.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable


DEFAULT_FINAL_PATTERN = r"final\s*=\s*TRUE"


class DotParseError(ValueError):
    """Malformed DOT input; carries the 1-based source line."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class NodeStatement:
    node_id: str
    label: str | None


@dataclass(frozen=True)
class EdgeStatement:
    src: str
    dst: str
    label: str | None


@dataclass
class RawGraph:
    """Statement-level view of a dump, duplicates preserved."""

    name: str
    nodes: list[NodeStatement] = field(default_factory=list)
    edges: list[EdgeStatement] = field(default_factory=list)
    dedup_ratio: float = 0.0

    def statement_count(self) -> int:
        return len(self.nodes) + len(self.edges)

    def state_ids(self) -> list[str]:
        """Distinct ids in dense-index order: numeric ids ascending by value,
        then string ids lexicographically. Independent of statement layout,
        so a reordered or deduplicated dump maps to the same dense indices.
        """
        seen: set[str] = set()
        for n in self.nodes:
            seen.add(n.node_id)
        for e in self.edges:
            seen.add(e.src)
            seen.add(e.dst)
        numeric = sorted((s for s in seen if re.fullmatch(r"\d+", s)), key=int)
        textual = sorted(s for s in seen if not re.fullmatch(r"\d+", s))
        return numeric + textual


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1

    def error(self, message: str) -> DotParseError:
        return DotParseError(message, self.line)

    def eof(self) -> bool:
        return self.pos >= len(self.text)

    def _advance(self, n: int = 1) -> None:
        for _ in range(n):
            if self.pos < len(self.text):
                if self.text[self.pos] == "\n":
                    self.line += 1
                self.pos += 1

    def skip(self) -> None:
        """Skip whitespace and // and block comments."""
        while not self.eof():
            ch = self.text[self.pos]
            if ch in " \t\r\n":
                self._advance()
            elif self.text.startswith("//", self.pos):
                while not self.eof() and self.text[self.pos] != "\n":
                    self._advance()
            elif self.text.startswith("/*", self.pos):
                start_line = self.line
                self._advance(2)
                while not self.eof() and not self.text.startswith("*/", self.pos):
                    self._advance()
                if self.eof():
                    raise DotParseError("unterminated block comment", start_line)
                self._advance(2)
            else:
                return

    def starts(self, s: str) -> bool:
        return self.text.startswith(s, self.pos)

    def expect(self, s: str, what: str | None = None) -> None:
        if not self.starts(s):
            raise self.error(f"expected {what or s!r}")
        self._advance(len(s))

    def ident(self) -> str | None:
        m = re.match(r"[A-Za-z_][A-Za-z0-9_]*", self.text[self.pos :])
        if not m:
            return None
        self._advance(len(m.group(0)))
        return m.group(0)

    def number(self) -> str | None:
        m = re.match(r"-?\d+(\.\d+)?", self.text[self.pos :])
        if not m:
            return None
        self._advance(len(m.group(0)))
        return m.group(0)

    def quoted(self) -> str:
        # Caller established the opening quote.
        start_line = self.line
        self._advance()
        out: list[str] = []
        while True:
            if self.eof():
                raise DotParseError("unterminated string", start_line)
            ch = self.text[self.pos]
            if ch == "\n":
                raise DotParseError("newline inside quoted string", start_line)
            if ch == "\\":
                self._advance()
                if self.eof():
                    raise DotParseError("dangling escape at end of input", self.line)
                nxt = self.text[self.pos]
                if nxt in ('"', "\\"):
                    out.append(nxt)
                else:
                    # Unknown escapes kept verbatim; DOT treats them literally.
                    out.append("\\")
                    out.append(nxt)
                self._advance()
            elif ch == '"':
                self._advance()
                return "".join(out)
            else:
                out.append(ch)
                self._advance()


def _read_id(sc: _Scanner) -> str | None:
    sc.skip()
    if sc.eof():
        return None
    ch = sc.text[sc.pos]
    if ch == '"':
        return sc.quoted()
    if ch.isdigit() or (ch == "-" and sc.pos + 1 < len(sc.text) and sc.text[sc.pos + 1].isdigit()):
        return sc.number()
    return None


def _read_attrs(sc: _Scanner) -> str | None:
    """Parse an optional [k=v, ...] list; return the label value if present."""
    sc.skip()
    if sc.eof() or not sc.starts("["):
        return None
    sc.expect("[")
    label = None
    while True:
        sc.skip()
        name = sc.ident()
        if name is None:
            raise sc.error("expected attribute name")
        sc.skip()
        sc.expect("=", "'=' after attribute name")
        sc.skip()
        if sc.eof():
            raise sc.error("expected attribute value")
        ch = sc.text[sc.pos]
        if ch == '"':
            value = sc.quoted()
        else:
            value = sc.ident() or sc.number()
            if value is None:
                raise sc.error("expected attribute value")
        if name == "label":
            label = value
        sc.skip()
        if sc.starts(","):
            sc.expect(",")
            continue
        sc.expect("]", "']' or ',' in attribute list")
        return label


def parse_dot(text: str) -> RawGraph:
    """Parse one digraph in the supported DOT subset, preserving duplicates."""
    sc = _Scanner(text)
    sc.skip()
    if sc.eof():
        raise sc.error("empty input")
    kw = sc.ident()
    if kw != "digraph":
        raise sc.error("expected 'digraph'")
    sc.skip()
    name = ""
    if not sc.starts("{"):
        got = sc.ident()
        if got is None:
            raise sc.error("expected graph name or '{'")
        name = got
        sc.skip()
    sc.expect("{", "'{' opening the graph body")
    graph = RawGraph(name=name)
    while True:
        sc.skip()
        if sc.eof():
            raise sc.error("unterminated graph body")
        if sc.starts("}"):
            sc.expect("}")
            break
        first = _read_id(sc)
        if first is None:
            raise sc.error("expected a state id (decimal integer or quoted string)")
        sc.skip()
        if sc.starts("->"):
            sc.expect("->")
            second = _read_id(sc)
            if second is None:
                raise sc.error("expected destination id after '->'")
            label = _read_attrs(sc)
            graph.edges.append(EdgeStatement(first, second, label))
        else:
            label = _read_attrs(sc)
            graph.nodes.append(NodeStatement(first, label))
        sc.skip()
        if sc.starts(";"):
            sc.expect(";")
    sc.skip()
    if not sc.eof():
        rest = sc.text[sc.pos : sc.pos + 8]
        if rest.startswith("digraph"):
            raise sc.error("multiple digraphs in one document")
        raise sc.error("trailing content after graph body")
    return graph


def _escape_label(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def _format_id(raw_id: str) -> str:
    if re.fullmatch(r"\d+", raw_id):
        return raw_id
    return '"%s"' % _escape_label(raw_id)


def emit_dot(graph: RawGraph) -> str:
    """Write a RawGraph back out in the same subset, one statement per line."""
    lines = ["digraph %s {" % (graph.name or "G")]
    for n in graph.nodes:
        if n.label is None:
            lines.append(f"{_format_id(n.node_id)};")
        else:
            lines.append(f'{_format_id(n.node_id)} [label="{_escape_label(n.label)}"];')
    for e in graph.edges:
        arrow = f"{_format_id(e.src)} -> {_format_id(e.dst)}"
        if e.label is None:
            lines.append(f"{arrow};")
        else:
            lines.append(f'{arrow} [label="{_escape_label(e.label)}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def clean(graph: RawGraph) -> RawGraph:
    """Drop duplicate statements, keeping first occurrences in order.

    The returned graph records the achieved reduction in dedup_ratio.
    """
    nodes: list[NodeStatement] = []
    seen_nodes: set[NodeStatement] = set()
    for n in graph.nodes:
        if n not in seen_nodes:
            seen_nodes.add(n)
            nodes.append(n)
    edges: list[EdgeStatement] = []
    seen_edges: set[EdgeStatement] = set()
    for e in graph.edges:
        if e not in seen_edges:
            seen_edges.add(e)
            edges.append(e)
    before = graph.statement_count()
    after = len(nodes) + len(edges)
    ratio = 0.0 if before == 0 else 1.0 - after / before
    return RawGraph(name=graph.name, nodes=nodes, edges=edges, dedup_ratio=ratio)


@dataclass(frozen=True)
class GraphStats:
    states: int
    transitions: int
    traversal_states: int
    traversal_transitions: int
    dedup_ratio: float


@dataclass
class StateSpaceGraph:
    """Dense-index directed graph with a super-final sink at index n-1.

    Parallel edges are merged; edge_labels maps (src, dst) to the sorted
    tuple of labels the merged edge carries (possibly empty).
    """

    n_states: int
    out_adj: list[list[int]]
    in_adj: list[list[int]]
    edge_labels: dict[tuple[int, int], tuple[str, ...]]
    initial: int
    finals: tuple[int, ...]
    super_final: int
    raw_ids: list[str]
    node_labels: list[str | None]
    dedup_ratio: float = 0.0

    def pairs(self) -> Iterable[tuple[int, int]]:
        for u in range(self.n_states):
            for v in self.out_adj[u]:
                yield (u, v)

    def edge_count(self) -> int:
        return sum(len(a) for a in self.out_adj)

    def is_sink_edge(self, u: int, v: int) -> bool:
        return v == self.super_final

    def least_label(self, u: int, v: int) -> str | None:
        labels = self.edge_labels.get((u, v), ())
        return labels[0] if labels else None

    def stats(self) -> GraphStats:
        total_edges = self.edge_count()
        return GraphStats(
            states=self.n_states - 1,
            transitions=total_edges - len(self.finals),
            traversal_states=self.n_states,
            traversal_transitions=total_edges,
            dedup_ratio=self.dedup_ratio,
        )

    def check_invariants(self) -> None:
        """Assert the structural laws; raises GraphError on violation."""
        n = self.n_states
        if self.super_final != n - 1:
            raise GraphError("super-final sink must be the last dense index")
        if self.out_adj[self.super_final]:
            raise GraphError("super-final sink has outgoing edges")
        for u in range(n):
            if self.out_adj[u] != sorted(self.out_adj[u]):
                raise GraphError(f"out adjacency of {u} not ascending")
            if self.in_adj[u] != sorted(self.in_adj[u]):
                raise GraphError(f"in adjacency of {u} not ascending")
        out_pairs = {(u, v) for u in range(n) for v in self.out_adj[u]}
        in_pairs = {(v, u) for u in range(n) for v in self.in_adj[u]}
        if out_pairs != in_pairs:
            raise GraphError("out/in adjacency are not duals")
        for f in self.finals:
            if self.super_final not in self.out_adj[f]:
                raise GraphError(f"final state {f} lacks a sink edge")
        reach = _bfs_set(self.out_adj, self.initial)
        if len(reach) != n:
            raise GraphError("not all states reachable from initial")
        coreach = _bfs_set(self.in_adj, self.super_final)
        if len(coreach) != n:
            raise GraphError("not all states co-reachable to sink")


def _bfs_set(adj: list[list[int]], start: int) -> set[int]:
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def _fmt_ids(ids: Iterable[str], cap: int = 12) -> str:
    ids = list(ids)
    shown = ", ".join(ids[:cap])
    if len(ids) > cap:
        shown += f", ... ({len(ids)} total)"
    return shown


def build(
    raw: RawGraph,
    *,
    final_predicate: str | Callable[[str], bool] = DEFAULT_FINAL_PATTERN,
    initial: str | None = None,
    prune: bool = False,
    allow_self_loops: bool = False,
) -> StateSpaceGraph:
    """Build a validated StateSpaceGraph from raw statements.

    The initial state is either the explicitly flagged raw id or the unique
    in-degree-zero state. Final states are those whose label matches
    final_predicate (a regex string or a callable on the label text); a
    super-final sink is appended with an edge from every final state.
    Every state must be reachable from the initial state and co-reachable
    to the sink, unless prune=True drops the offenders instead.
    """
    if not raw.nodes and not raw.edges:
        raise GraphError("empty graph: no statements")

    if callable(final_predicate):
        is_final_label = final_predicate
    else:
        pattern = re.compile(final_predicate)
        is_final_label = lambda text: bool(pattern.search(text))  # noqa: E731

    ids = raw.state_ids()
    index_of = {rid: i for i, rid in enumerate(ids)}
    n_real = len(ids)

    labels: list[str | None] = [None] * n_real
    for n in raw.nodes:
        i = index_of[n.node_id]
        if labels[i] is None and n.label is not None:
            labels[i] = n.label

    merged: dict[tuple[int, int], set[str]] = {}
    for e in raw.edges:
        key = (index_of[e.src], index_of[e.dst])
        bucket = merged.setdefault(key, set())
        if e.label is not None:
            bucket.add(e.label)

    self_loops = sorted({u for (u, v) in merged if u == v})
    if self_loops and not allow_self_loops:
        raise GraphError(
            "self-loops rejected: " + _fmt_ids(ids[u] for u in self_loops)
        )

    in_degree = [0] * n_real
    for (_, v) in merged:
        in_degree[v] += 1

    if initial is not None:
        if initial not in index_of:
            raise GraphError(f"flagged initial state {initial!r} not present")
        init_idx = index_of[initial]
    else:
        candidates = [i for i in range(n_real) if in_degree[i] == 0]
        if len(candidates) != 1:
            raise GraphError(
                "initial state not unique; in-degree-zero candidates: "
                + (_fmt_ids(ids[i] for i in candidates) if candidates else "(none)")
            )
        init_idx = candidates[0]

    finals = [i for i in range(n_real) if labels[i] is not None and is_final_label(labels[i])]
    if not finals:
        raise GraphError("no final states matched the final predicate")

    sink = n_real
    n = n_real + 1
    out_adj: list[list[int]] = [[] for _ in range(n)]
    in_adj: list[list[int]] = [[] for _ in range(n)]
    edge_labels: dict[tuple[int, int], tuple[str, ...]] = {}
    for (u, v), label_set in merged.items():
        out_adj[u].append(v)
        in_adj[v].append(u)
        edge_labels[(u, v)] = tuple(sorted(label_set))
    for f in finals:
        out_adj[f].append(sink)
        in_adj[sink].append(f)
        edge_labels[(f, sink)] = ()
    for u in range(n):
        out_adj[u].sort()
        in_adj[u].sort()

    reach = _bfs_set(out_adj, init_idx)
    coreach = _bfs_set(in_adj, sink)
    keep = reach & coreach
    offenders = [i for i in range(n_real) if i not in keep]
    if offenders:
        if not prune:
            raise GraphError(
                "validation failed; states not both reachable and co-reachable: "
                + _fmt_ids(ids[i] for i in offenders)
            )
        if init_idx not in keep:
            raise GraphError("initial state itself is not co-reachable; nothing to keep")
        kept_ids = [ids[i] for i in range(n_real) if i in keep]
        kept_set = set(kept_ids)
        filtered = RawGraph(
            name=raw.name,
            nodes=[s for s in raw.nodes if s.node_id in kept_set],
            edges=[e for e in raw.edges if e.src in kept_set and e.dst in kept_set],
            dedup_ratio=raw.dedup_ratio,
        )
        return build(
            filtered,
            final_predicate=final_predicate,
            initial=ids[init_idx],
            prune=False,
            allow_self_loops=allow_self_loops,
        )

    graph = StateSpaceGraph(
        n_states=n,
        out_adj=out_adj,
        in_adj=in_adj,
        edge_labels=edge_labels,
        initial=init_idx,
        finals=tuple(finals),
        super_final=sink,
        raw_ids=ids,
        node_labels=labels,
        dedup_ratio=raw.dedup_ratio,
    )
    graph.check_invariants()
    return graph
