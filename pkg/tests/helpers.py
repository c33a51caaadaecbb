"""Shared test utilities: random graph construction and independent oracles.

The oracles here are deliberately written against the public graph arrays
only, with none of the production path logic, so they can arbitrate.
"""

from __future__ import annotations

import random

from statecover.ssg import EdgeStatement, NodeStatement, RawGraph, StateSpaceGraph, build


def make_random_dag_raw(rng: random.Random) -> RawGraph:
    """Random DAG over 2..12 states: node 0 initial, sinks are final states.

    Every node j > 0 gets at least one incoming edge from an earlier node, so
    the whole graph is reachable from 0; in a DAG every node reaches a sink,
    so co-reachability holds by construction.
    """
    n = rng.randint(2, 12)
    edges: set[tuple[int, int]] = set()
    for j in range(1, n):
        for i in range(j):
            if rng.random() < 0.4:
                edges.add((i, j))
        if not any(dst == j for (_, dst) in edges):
            edges.add((rng.randrange(j), j))
    has_out = {u for (u, _) in edges}
    nodes = []
    for i in range(n):
        final = i not in has_out
        label = "final = TRUE" if final else "final = FALSE"
        nodes.append(NodeStatement(str(i), label))
    edge_stmts = [
        EdgeStatement(str(u), str(v), f"step{u}_{v}(x)") for (u, v) in sorted(edges)
    ]
    return RawGraph(name="rand", nodes=nodes, edges=edge_stmts)


def build_random_dag(seed: int) -> StateSpaceGraph:
    return build(make_random_dag_raw(random.Random(seed)))


def brute_force_paths(graph: StateSpaceGraph) -> set[tuple[int, ...]]:
    """Every path from the initial state to the sink, by plain DFS.

    Only terminates on acyclic graphs; the callers only hand it DAGs.
    """
    sink = graph.super_final
    out: set[tuple[int, ...]] = set()
    stack = [(graph.initial, (graph.initial,))]
    while stack:
        node, path = stack.pop()
        if node == sink:
            out.add(path)
            continue
        for nxt in graph.out_adj[node]:
            stack.append((nxt, path + (nxt,)))
    return out


def bfs_distance_to_sink(graph: StateSpaceGraph) -> dict[int, int]:
    """Hop count from every state to the sink over reversed edges."""
    dist = {graph.super_final: 0}
    frontier = [graph.super_final]
    while frontier:
        nxt = []
        for v in frontier:
            for u in graph.in_adj[v]:
                if u not in dist:
                    dist[u] = dist[v] + 1
                    nxt.append(u)
        frontier = nxt
    return dist


def tournaments_raw() -> RawGraph:
    """Hand-written dump of the 1-player/1-tournament/1-enrolment lifecycle.

    The structure (6 states, 10 transitions) and the expected selected paths
    in the tests were traced by hand from the BFS algorithms.
    """
    false = "final = FALSE"
    nodes = [
        NodeStatement("0", false),  # all empty
        NodeStatement("1", false),  # player only
        NodeStatement("2", false),  # tournament only
        NodeStatement("3", false),  # player + tournament
        NodeStatement("4", "final = TRUE"),  # all empty again, terminal
        NodeStatement("5", false),  # enrolled
    ]
    edges = [
        EdgeStatement("0", "1", "postPlayer(p1)"),
        EdgeStatement("0", "2", "postTournament(t1)"),
        EdgeStatement("1", "3", "postTournament(t1)"),
        EdgeStatement("1", "4", "deletePlayer(p1)"),
        EdgeStatement("2", "3", "postPlayer(p1)"),
        EdgeStatement("2", "4", "deleteTournament(t1)"),
        EdgeStatement("3", "1", "deleteTournament(t1)"),
        EdgeStatement("3", "2", "deletePlayer(p1)"),
        EdgeStatement("3", "5", "postEnrolment(e1,p1,t1)"),
        EdgeStatement("5", "3", "deleteEnrolment(e1)"),
    ]
    return RawGraph(name="tournaments", nodes=nodes, edges=edges)


TOURNAMENTS_RESOLVER_TABLE = {
    "postPlayer": {"op": "postPlayer", "verb": "POST", "path": "/players", "param_names": ["pid"], "own_key": "pid"},
    "deletePlayer": {"op": "deletePlayer", "verb": "DELETE", "path": "/players/{pid}", "param_names": ["pid"], "own_key": "pid"},
    "postTournament": {"op": "postTournament", "verb": "POST", "path": "/tournaments", "param_names": ["tid"], "own_key": "tid"},
    "deleteTournament": {"op": "deleteTournament", "verb": "DELETE", "path": "/tournaments/{tid}", "param_names": ["tid"], "own_key": "tid"},
    "postEnrolment": {"op": "postEnrolment", "verb": "POST", "path": "/enrolments", "param_names": ["eid", "pid", "tid"], "own_key": "eid"},
    "deleteEnrolment": {"op": "deleteEnrolment", "verb": "DELETE", "path": "/enrolments/{eid}", "param_names": ["eid"], "own_key": "eid"},
}


def tournaments_resolver(name: str) -> dict | None:
    return TOURNAMENTS_RESOLVER_TABLE.get(name)
