"""Architecture DAGs: search space, validity, sampling, enumeration, serialization.

Nodes are indexed in topological order. Node 0 is the input, node n-1 the
output, and nodes 1..n-2 carry one operation each. Edges are stored as
(src, dst) pairs with src < dst, which makes every graph acyclic by
construction and fixes a canonical node ordering.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator

import numpy as np

DEFAULT_OPERATIONS = (
    "conv3x3",
    "conv5x5",
    "sepconv3x3",
    "sepconv5x5",
    "maxpool3x3",
    "avgpool3x3",
)


class MalformedDag(ValueError):
    """Node types or edges violate the structural contract."""


class ParseError(ValueError):
    """A serialized record cannot be decoded into a DAG."""


@dataclass(frozen=True)
class SearchSpace:
    """An ENAS-style macro search space: a fixed number of operation layers.

    Type indices 0..len(operations)-1 name the operations; the two reserved
    indices input_type and output_type follow them.
    """

    num_op_layers: int = 6
    operations: tuple[str, ...] = DEFAULT_OPERATIONS

    def __post_init__(self) -> None:
        object.__setattr__(self, "operations", tuple(self.operations))
        if self.num_op_layers < 0:
            raise ValueError("num_op_layers must be >= 0")
        if not self.operations:
            raise ValueError("operations list must be non-empty")
        if len(set(self.operations)) != len(self.operations):
            raise ValueError("operation names must be unique")

    @property
    def input_type(self) -> int:
        return len(self.operations)

    @property
    def output_type(self) -> int:
        return len(self.operations) + 1

    @property
    def num_types(self) -> int:
        return len(self.operations) + 2

    @property
    def num_nodes(self) -> int:
        return self.num_op_layers + 2

    def mandatory_edges(self) -> frozenset[tuple[int, int]]:
        return frozenset((i - 1, i) for i in range(1, self.num_nodes))

    def skip_slots(self) -> tuple[tuple[int, int], ...]:
        """All optional edge slots (j, i): op-layer targets i, sources j < i-1."""
        last_op = self.num_op_layers  # op layers occupy node ids 1..num_op_layers
        return tuple((j, i) for i in range(2, last_op + 1) for j in range(i - 1))

    def size(self) -> int:
        """Number of distinct DAGs the sampling rule can produce."""
        return len(self.operations) ** self.num_op_layers * 2 ** len(self.skip_slots())


@dataclass(frozen=True)
class ArchitectureDag:
    """An ordered, labeled DAG with an optional attached performance value.

    Equality of the dataclass includes perf; use dags_equal for the
    structural equality that all metrics rely on.
    """

    op_of_node: tuple[int, ...]
    edges: frozenset[tuple[int, int]]
    perf: float | None = None

    @property
    def num_nodes(self) -> int:
        return len(self.op_of_node)

    @cached_property
    def sorted_edges(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(self.edges))

    def predecessors(self, node: int) -> tuple[int, ...]:
        return tuple(s for s, d in self.sorted_edges if d == node)

    def successors(self, node: int) -> tuple[int, ...]:
        return tuple(d for s, d in self.sorted_edges if s == node)

    def adjacency(self) -> np.ndarray:
        """Boolean (n, n) matrix, A[s, d] true iff edge (s, d) exists."""
        n = self.num_nodes
        a = np.zeros((n, n), dtype=bool)
        for s, d in self.edges:
            a[s, d] = True
        return a

    def with_perf(self, perf: float | None) -> "ArchitectureDag":
        return ArchitectureDag(self.op_of_node, self.edges, perf)


@dataclass(frozen=True)
class ValidityReport:
    is_valid: bool
    violations: tuple[str, ...] = ()


def _check_structure(
    ops: tuple[int, ...],
    edges: frozenset[tuple[int, int]],
    input_type: int,
    output_type: int,
) -> None:
    n = len(ops)
    if n < 2:
        raise MalformedDag("a DAG needs at least an input and an output node")
    if ops[0] != input_type:
        raise MalformedDag(f"node 0 must have the input type {input_type}, got {ops[0]}")
    if ops[-1] != output_type:
        raise MalformedDag(f"node {n - 1} must have the output type {output_type}, got {ops[-1]}")
    for i, t in enumerate(ops[1:-1], start=1):
        if not 0 <= t < input_type:
            raise MalformedDag(f"node {i} has out-of-range operation index {t}")
    for e in edges:
        if len(e) != 2:
            raise MalformedDag(f"edge {e!r} is not a (src, dst) pair")
        s, d = e
        if not (isinstance(s, int) and isinstance(d, int)):
            raise MalformedDag(f"edge {e!r} endpoints must be integers")
        if not 0 <= s < d < n:
            raise MalformedDag(f"edge ({s}, {d}) violates src < dst within {n} nodes")


def new_dag(
    ops: Iterable[int],
    edges: Iterable[tuple[int, int]],
    space: SearchSpace,
    perf: float | None = None,
) -> ArchitectureDag:
    """Build a DAG after checking it structurally against the space."""
    ops_t = tuple(int(t) for t in ops)
    edges_f = frozenset((int(s), int(d)) for s, d in edges)
    if len(ops_t) != space.num_nodes:
        raise MalformedDag(
            f"expected {space.num_nodes} nodes for this space, got {len(ops_t)}"
        )
    _check_structure(ops_t, edges_f, space.input_type, space.output_type)
    return ArchitectureDag(ops_t, edges_f, perf)


def validate(dag: ArchitectureDag) -> ValidityReport:
    """Check the connectivity invariants; total over well-formed DAGs."""
    n = dag.num_nodes
    violations: list[str] = []
    has_pred = [False] * n
    has_succ = [False] * n
    succ: list[list[int]] = [[] for _ in range(n)]
    pred: list[list[int]] = [[] for _ in range(n)]
    for s, d in dag.sorted_edges:
        has_pred[d] = True
        has_succ[s] = True
        succ[s].append(d)
        pred[d].append(s)
    for i in range(1, n):
        if not has_pred[i]:
            violations.append(f"orphan node {i}")
    for i in range(n - 1):
        if not has_succ[i]:
            violations.append(f"dead-end node {i}")
    reach_fwd = _reachable_from(0, succ)
    for i in range(n):
        if i not in reach_fwd:
            violations.append(f"node {i} unreachable from input")
    reach_bwd = _reachable_from(n - 1, pred)
    for i in range(n):
        if i not in reach_bwd:
            violations.append(f"output unreachable from node {i}")
    return ValidityReport(not violations, tuple(violations))


def _reachable_from(start: int, out_edges: list[list[int]]) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in out_edges[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def complete_loose_ends(num_nodes: int, edges: set[tuple[int, int]]) -> set[tuple[int, int]]:
    """Connect every non-output node without a successor to the output node."""
    out = num_nodes - 1
    has_succ = [False] * num_nodes
    for s, _ in edges:
        has_succ[s] = True
    for v in range(out):
        if not has_succ[v]:
            edges.add((v, out))
    return edges


def sample_random(space: SearchSpace, rng: np.random.Generator) -> ArchitectureDag:
    """Sample one DAG: uniform operations, the chain of mandatory edges, and
    each skip slot filled independently with probability 0.5."""
    n_ops = len(space.operations)
    layer_ops = rng.integers(0, n_ops, size=space.num_op_layers)
    ops = (space.input_type, *map(int, layer_ops), space.output_type)
    edges = set(space.mandatory_edges())
    slots = space.skip_slots()
    if slots:
        picks = rng.random(len(slots)) < 0.5
        edges.update(slot for slot, hit in zip(slots, picks) if hit)
    complete_loose_ends(space.num_nodes, edges)
    return ArchitectureDag(ops, frozenset(edges))


def enumerate_space(space: SearchSpace) -> Iterator[ArchitectureDag]:
    """Yield every distinct DAG the sampling rule can produce, exactly once.

    The stream has space.size() = |ops|^L * 2^(L(L-1)/2) elements; callers are
    responsible for keeping the space small enough to walk.
    """
    n_ops = len(space.operations)
    slots = space.skip_slots()
    base = set(space.mandatory_edges())
    for layer_ops in itertools.product(range(n_ops), repeat=space.num_op_layers):
        ops = (space.input_type, *layer_ops, space.output_type)
        for mask in itertools.product((False, True), repeat=len(slots)):
            edges = set(base)
            edges.update(slot for slot, hit in zip(slots, mask) if hit)
            complete_loose_ends(space.num_nodes, edges)
            yield ArchitectureDag(ops, frozenset(edges))


def canonicalize(dag: ArchitectureDag) -> bytes:
    """A byte string determined exactly by op_of_node and the sorted edge set."""
    ops = ",".join(str(t) for t in dag.op_of_node)
    edges = ";".join(f"{s}-{d}" for s, d in dag.sorted_edges)
    return f"{ops}|{edges}".encode("ascii")


def dags_equal(a: ArchitectureDag, b: ArchitectureDag) -> bool:
    return canonicalize(a) == canonicalize(b)


def serialize(dag: ArchitectureDag) -> str:
    """One JSON record per DAG; edges sorted so output is canonical."""
    record: dict = {
        "ops": list(dag.op_of_node),
        "edges": [list(e) for e in dag.sorted_edges],
    }
    if dag.perf is not None:
        record["perf"] = float(dag.perf)
    return json.dumps(record, separators=(",", ":"))


def parse(record: str, space: SearchSpace | None = None) -> ArchitectureDag:
    """Inverse of serialize. With a space, checks against it; without one, the
    reserved type indices are inferred from the endpoint nodes."""
    try:
        obj = json.loads(record)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object")
    for key in ("ops", "edges"):
        if key not in obj:
            raise ParseError(f"missing field {key!r}")
    ops_raw = obj["ops"]
    edges_raw = obj["edges"]
    if not isinstance(ops_raw, list) or not all(isinstance(t, int) for t in ops_raw):
        raise ParseError("field 'ops' must be a list of integers")
    if not isinstance(edges_raw, list):
        raise ParseError("field 'edges' must be a list of [src, dst] pairs")
    edges = set()
    for e in edges_raw:
        if not (isinstance(e, list) and len(e) == 2 and all(isinstance(x, int) for x in e)):
            raise ParseError(f"field 'edges' contains a malformed entry {e!r}")
        edges.add((e[0], e[1]))
    perf = obj.get("perf")
    if perf is not None and not isinstance(perf, (int, float)):
        raise ParseError("field 'perf' must be a number")
    ops = tuple(ops_raw)
    try:
        if space is not None:
            return new_dag(ops, edges, space, perf=perf)
        if len(ops) < 2:
            raise MalformedDag("a DAG needs at least an input and an output node")
        input_type = ops[0]
        _check_structure(ops, frozenset(edges), input_type, input_type + 1)
    except MalformedDag as exc:
        raise ParseError(str(exc)) from None
    return ArchitectureDag(ops, frozenset(edges), None if perf is None else float(perf))


def save_corpus(path: str, dags: Iterable[ArchitectureDag]) -> int:
    """Write DAGs as JSONL; returns the number of records written."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for dag in dags:
            fh.write(serialize(dag))
            fh.write("\n")
            count += 1
    return count


def load_corpus(path: str, space: SearchSpace | None = None) -> list[ArchitectureDag]:
    """Read a JSONL corpus; ParseError messages carry the line number."""
    dags = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                dags.append(parse(line, space))
            except ParseError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
    return dags
