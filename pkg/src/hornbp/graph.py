"""Factor graph data model for binary variables with AND/OR clause factors.

A factor connects a head variable to zero or more body variables and carries
two parameters p1, p2:

* AND factor: value is p1/1-p1 (head true/false) when every body variable is
  true, p2/1-p2 otherwise.
* OR factor: value is p1/1-p1 when at least one body variable is true,
  p2/1-p2 when all are false.

A body-empty AND factor acts as a prior on its head (p1 must equal p2);
evidence is expressed as a body-empty AND factor with p1 = p2 set to 1
(observed true) or 0 (observed false).

The module also owns the FASTFG text format, the conversion from
clause/tuple/input DAGs, and evidence clamping.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterator, NamedTuple, Optional, Sequence


class GraphError(ValueError):
    """Invalid factor graph structure or parameters."""


class FormatError(GraphError):
    """Malformed input text; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class FactorKind(Enum):
    AND = "AND"
    OR = "OR"


class EdgeId(NamedTuple):
    """One undirected edge, named by factor index and slot within the factor.

    Slot 0 is the head variable; slot k >= 1 is the k-th body variable.
    Each edge carries one message in each direction.
    """

    factor: int
    slot: int

    def __str__(self) -> str:
        return f"{self.factor}:{self.slot}"


@dataclass(frozen=True)
class Factor:
    kind: FactorKind
    head: int
    body: tuple[int, ...]
    p1: float
    p2: float

    @property
    def arity(self) -> int:
        """Number of body variables (n)."""
        return len(self.body)

    @property
    def degree(self) -> int:
        """Number of connected variables (n + 1)."""
        return len(self.body) + 1

    def variables(self) -> tuple[int, ...]:
        """Connected variables in slot order: head first, then body."""
        return (self.head,) + self.body


class FactorGraph:
    """Immutable bipartite graph of binary variables and AND/OR factors.

    Validates on construction:
    - variable indices in range, head not repeated in body, no duplicate
      body members;
    - probabilities in [0, 1];
    - body-empty factors are AND with p1 == p2 (priors/evidence);
    - every variable participates in at least one factor.
    """

    def __init__(
        self,
        num_variables: int,
        factors: Sequence[Factor],
        names: Optional[Sequence[str]] = None,
    ):
        if num_variables < 0:
            raise GraphError("variable count must be nonnegative")
        if names is not None and len(names) != num_variables:
            raise GraphError("names table must have one entry per variable")
        self.num_variables = num_variables
        self.factors: tuple[Factor, ...] = tuple(factors)
        self.names: Optional[tuple[str, ...]] = tuple(names) if names else None

        adjacency: list[list[tuple[int, int]]] = [[] for _ in range(num_variables)]
        num_edges = 0
        for fi, factor in enumerate(self.factors):
            self._check_factor(fi, factor)
            for slot, var in enumerate(factor.variables()):
                adjacency[var].append((fi, slot))
            num_edges += factor.degree
        for var, entries in enumerate(adjacency):
            if not entries:
                raise GraphError(f"variable {var} appears in no factor")
        # Factor-major iteration already yields (factor, slot)-sorted rows.
        self.adjacency: tuple[tuple[tuple[int, int], ...], ...] = tuple(
            tuple(entries) for entries in adjacency
        )
        self.num_edges = num_edges

    def _check_factor(self, index: int, factor: Factor) -> None:
        label = f"factor {index}"
        for var in factor.variables():
            if not 0 <= var < self.num_variables:
                raise GraphError(f"{label}: variable {var} out of range")
        if factor.head in factor.body:
            raise GraphError(f"{label}: head variable repeated in body")
        if len(set(factor.body)) != len(factor.body):
            raise GraphError(f"{label}: duplicate body variable")
        for name, p in (("p1", factor.p1), ("p2", factor.p2)):
            if not 0.0 <= p <= 1.0:
                raise GraphError(f"{label}: {name}={p} outside [0, 1]")
        if not factor.body:
            if factor.kind is FactorKind.OR:
                raise GraphError(f"{label}: OR factor with empty body has no meaning")
            if factor.p1 != factor.p2:
                raise GraphError(
                    f"{label}: body-empty factor requires p1 == p2 "
                    f"(got {factor.p1}, {factor.p2})"
                )

    @property
    def num_factors(self) -> int:
        return len(self.factors)

    def edges(self) -> Iterator[EdgeId]:
        """All edges in canonical factor-major order."""
        for fi, factor in enumerate(self.factors):
            for slot in range(factor.degree):
                yield EdgeId(fi, slot)

    def edge_list(self) -> list[EdgeId]:
        return list(self.edges())

    def variable_of(self, edge: EdgeId) -> int:
        """Variable at the given edge's slot."""
        factor = self.factors[edge.factor]
        if not 0 <= edge.slot < factor.degree:
            raise GraphError(f"edge {edge}: slot out of range")
        return factor.head if edge.slot == 0 else factor.body[edge.slot - 1]

    def check_edge(self, edge: EdgeId) -> EdgeId:
        if not 0 <= edge.factor < self.num_factors:
            raise GraphError(f"edge {edge}: factor index out of range")
        if not 0 <= edge.slot < self.factors[edge.factor].degree:
            raise GraphError(f"edge {edge}: slot out of range")
        return edge

    def degree_of_variable(self, var: int) -> int:
        return len(self.adjacency[var])

    def name_of(self, var: int) -> str:
        if self.names is not None:
            return self.names[var]
        return str(var)

    def to_fastfg(self) -> str:
        """Serialize in the FASTFG text format (round-trips via parse_fastfg)."""
        lines = ["FASTFG 1", f"vars {self.num_variables}"]
        for factor in self.factors:
            body = ",".join(str(v) for v in factor.body)
            lines.append(
                f"factor {factor.kind.value} {factor.p1!r} {factor.p2!r} "
                f"head={factor.head} body={body}"
            )
        return "\n".join(lines) + "\n"


def clamp_evidence(graph: FactorGraph, variable: int, observed: bool) -> FactorGraph:
    """Return a new graph with the variable pinned to the observed value.

    Appends one body-empty AND factor with p1 = p2 = 1 (observed true) or
    0 (observed false). Existing factors and their edge ids are untouched,
    so schedules compiled for the old edge set index the same messages.
    """
    if not 0 <= variable < graph.num_variables:
        raise GraphError(f"variable {variable} out of range")
    p = 1.0 if observed else 0.0
    pin = Factor(FactorKind.AND, variable, (), p, p)
    return FactorGraph(graph.num_variables, graph.factors + (pin,), graph.names)


def parse_fastfg(text: str) -> FactorGraph:
    """Parse the FASTFG line format.

    Layout: a `FASTFG 1` magic line, a `vars <N>` line, then one line per
    factor: `factor <AND|OR> <p1> <p2> head=<v> body=<v,v,...>` (body may be
    empty). `#` starts a comment; blank lines are skipped.
    """
    num_variables: Optional[int] = None
    saw_magic = False
    factors: list[Factor] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if not saw_magic:
            if tokens != ["FASTFG", "1"]:
                raise FormatError(lineno, "expected header 'FASTFG 1'")
            saw_magic = True
            continue
        if num_variables is None:
            if len(tokens) != 2 or tokens[0] != "vars":
                raise FormatError(lineno, "expected 'vars <N>'")
            try:
                num_variables = int(tokens[1])
            except ValueError:
                raise FormatError(lineno, f"bad variable count {tokens[1]!r}") from None
            if num_variables < 0:
                raise FormatError(lineno, "variable count must be nonnegative")
            continue
        factors.append(_parse_factor_line(lineno, tokens, num_variables))

    if not saw_magic:
        raise FormatError(1, "missing 'FASTFG 1' header")
    if num_variables is None:
        raise FormatError(1, "missing 'vars <N>' line")
    try:
        return FactorGraph(num_variables, factors)
    except GraphError as exc:
        raise GraphError(f"invalid graph: {exc}") from exc


def _parse_factor_line(lineno: int, tokens: list[str], num_variables: int) -> Factor:
    if len(tokens) != 6 or tokens[0] != "factor":
        raise FormatError(
            lineno, "expected 'factor <AND|OR> <p1> <p2> head=<v> body=<v,...>'"
        )
    try:
        kind = FactorKind(tokens[1])
    except ValueError:
        raise FormatError(lineno, f"unknown factor kind {tokens[1]!r}") from None
    probs = []
    for tok in tokens[2:4]:
        try:
            p = float(tok)
        except ValueError:
            raise FormatError(lineno, f"bad probability {tok!r}") from None
        if not 0.0 <= p <= 1.0:
            raise FormatError(lineno, f"probability {tok} outside [0, 1]")
        probs.append(p)
    if not tokens[4].startswith("head="):
        raise FormatError(lineno, "expected head=<v>")
    if not tokens[5].startswith("body="):
        raise FormatError(lineno, "expected body=<v,...>")

    def var_index(tok: str) -> int:
        try:
            v = int(tok)
        except ValueError:
            raise FormatError(lineno, f"bad variable index {tok!r}") from None
        if not 0 <= v < num_variables:
            raise FormatError(
                lineno, f"variable index {v} out of range (vars {num_variables})"
            )
        return v

    head = var_index(tokens[4][len("head=") :])
    body_text = tokens[5][len("body=") :]
    body = tuple(var_index(tok) for tok in body_text.split(",") if tok != "")
    if head in body:
        raise FormatError(lineno, f"head variable {head} repeated in body")
    if len(set(body)) != len(body):
        raise FormatError(lineno, "duplicate body variable")
    return Factor(kind, head, body, probs[0], probs[1])


@dataclass(frozen=True)
class DagNode:
    """One node of a clause/tuple/input DAG (conversion input)."""

    id: str
    role: str  # "clause", "tuple", or "input"
    prob: Optional[float] = None


DEFAULT_CLAUSE_PROB = 0.999


def from_bayesian_dag(
    nodes: Sequence[DagNode], dag_edges: Sequence[tuple[str, str]]
) -> FactorGraph:
    """Convert a clause/tuple/input DAG into a factor graph.

    One variable per DAG node. Per role:
    - input: body-empty AND prior with p1 = p2 = p (the node must have no
      incoming edges);
    - clause with premises t1..tn (incoming edges): AND factor, head = clause
      variable, body = premise variables, p1 = p, p2 = 0;
    - tuple with parent clauses (incoming edges, at least one required): OR
      factor, head = tuple variable, body = parent variables, p1 = 1, p2 = 0.

    Missing probabilities default to 0.999. The DAG must be acyclic.
    """
    index: dict[str, int] = {}
    for node in nodes:
        if node.role not in ("clause", "tuple", "input"):
            raise GraphError(f"node {node.id}: unknown role {node.role!r}")
        if node.id in index:
            raise GraphError(f"node {node.id}: declared twice")
        if node.role == "tuple" and node.prob is not None:
            raise GraphError(f"node {node.id}: tuple nodes take no probability")
        index[node.id] = len(index)

    parents: list[list[int]] = [[] for _ in nodes]
    children: list[list[int]] = [[] for _ in nodes]
    for src, dst in dag_edges:
        for endpoint in (src, dst):
            if endpoint not in index:
                raise GraphError(f"edge {src} -> {dst}: unknown node {endpoint!r}")
        parents[index[dst]].append(index[src])
        children[index[src]].append(index[dst])

    _check_acyclic(nodes, parents, children)

    factors: list[Factor] = []
    for node in nodes:
        i = index[node.id]
        p = node.prob if node.prob is not None else DEFAULT_CLAUSE_PROB
        if node.role == "input":
            if parents[i]:
                raise GraphError(f"node {node.id}: input node has premises")
            factors.append(Factor(FactorKind.AND, i, (), p, p))
        elif node.role == "clause":
            if not parents[i]:
                raise GraphError(
                    f"node {node.id}: clause node has no premises; use role input"
                )
            factors.append(Factor(FactorKind.AND, i, tuple(parents[i]), p, 0.0))
        else:  # tuple
            if not parents[i]:
                raise GraphError(f"node {node.id}: tuple node has no deriving clause")
            factors.append(Factor(FactorKind.OR, i, tuple(parents[i]), 1.0, 0.0))

    names = [node.id for node in nodes]
    return FactorGraph(len(nodes), factors, names)


def _check_acyclic(
    nodes: Sequence[DagNode], parents: list[list[int]], children: list[list[int]]
) -> None:
    indegree = [len(p) for p in parents]
    queue = [i for i, d in enumerate(indegree) if d == 0]
    seen = 0
    while queue:
        i = queue.pop()
        seen += 1
        for j in children[i]:
            indegree[j] -= 1
            if indegree[j] == 0:
                queue.append(j)
    if seen != len(nodes):
        stuck = next(i for i, d in enumerate(indegree) if d > 0)
        raise GraphError(f"input DAG has a cycle through node {nodes[stuck].id}")


def parse_dag(text: str) -> FactorGraph:
    """Parse the DAG line format and convert.

    Lines: `node <id> <clause|tuple|input> [p=<prob>]`, then
    `edge <from> <to>`. `#` comments and blank lines allowed.
    """
    nodes: list[DagNode] = []
    dag_edges: list[tuple[str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "node":
            if len(tokens) not in (3, 4):
                raise FormatError(lineno, "expected 'node <id> <role> [p=<prob>]'")
            prob = None
            if len(tokens) == 4:
                if not tokens[3].startswith("p="):
                    raise FormatError(lineno, "expected p=<prob>")
                try:
                    prob = float(tokens[3][2:])
                except ValueError:
                    raise FormatError(lineno, f"bad probability {tokens[3][2:]!r}") from None
                if not 0.0 <= prob <= 1.0:
                    raise FormatError(lineno, f"probability {prob} outside [0, 1]")
            nodes.append(DagNode(tokens[1], tokens[2], prob))
        elif tokens[0] == "edge":
            if len(tokens) != 3:
                raise FormatError(lineno, "expected 'edge <from> <to>'")
            dag_edges.append((tokens[1], tokens[2]))
        else:
            raise FormatError(lineno, f"unknown directive {tokens[0]!r}")
    try:
        return from_bayesian_dag(nodes, dag_edges)
    except GraphError as exc:
        if isinstance(exc, FormatError):
            raise
        raise GraphError(f"invalid DAG: {exc}") from exc
