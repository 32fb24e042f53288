"""Directed graphical models: construction, sampling, densities, d-separation."""

from __future__ import annotations

import heapq
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .distributions import Family, InvalidParameters, family


class CycleDetected(ValueError):
    pass


class UnknownVariable(KeyError):
    pass


class MissingVariable(KeyError):
    pass


class VariableId(NamedTuple):
    """Node identifier; ``index`` is the instance number inside a plate."""

    name: str
    index: int | None = None

    def __str__(self) -> str:
        return self.name if self.index is None else f"{self.name}[{self.index}]"


def var(name: str, index: int | None = None) -> VariableId:
    return VariableId(name, index)


@dataclass(frozen=True)
class DistributionSpec:
    """A family plus a transform from parent values (in parent order) to its parameters."""

    family: str
    transform: Callable[..., tuple]

    @property
    def impl(self) -> Family:
        return family(self.family)

    def params(self, parent_values: Iterable) -> tuple:
        return tuple(self.transform(*parent_values))


def const(family_name: str, *params: float) -> DistributionSpec:
    return DistributionSpec(family_name, lambda: params)


@dataclass(frozen=True)
class Node:
    id: VariableId
    role: str  # "latent" | "observed"
    parents: tuple[VariableId, ...]
    dist: DistributionSpec

    @property
    def observed(self) -> bool:
        return self.role == "observed"

    @property
    def support(self) -> str:
        return "discrete" if self.dist.impl.discrete else "continuous"


@dataclass(frozen=True)
class Plate:
    name: str
    members: tuple[str, ...]
    count: int


@dataclass(frozen=True, eq=False)
class GraphModel:
    """An immutable DAG of latent and observed nodes.

    Nodes are kept in declaration order, which also breaks ties in
    :func:`topological_sort`.
    """

    nodes: tuple[Node, ...]
    plates: tuple[Plate, ...] = ()
    name: str = "model"
    _by_id: dict = field(init=False, repr=False)
    _children: dict = field(init=False, repr=False)
    _order: tuple = field(init=False, repr=False)

    def __post_init__(self):
        by_id = {}
        for node in self.nodes:
            if node.id in by_id:
                raise ValueError(f"duplicate variable {node.id}")
            if node.role not in ("latent", "observed"):
                raise ValueError(f"bad role {node.role!r} for {node.id}")
            by_id[node.id] = node
        children = {v: [] for v in by_id}
        for node in self.nodes:
            for p in node.parents:
                if p not in by_id:
                    raise UnknownVariable(f"{node.id} has unknown parent {p}")
                children[p].append(node.id)
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_children", {v: tuple(c) for v, c in children.items()})
        object.__setattr__(self, "_order", tuple(_kahn({n.id: n.parents for n in self.nodes})))

    def __contains__(self, v) -> bool:
        return v in self._by_id

    def node(self, v: VariableId) -> Node:
        try:
            return self._by_id[v]
        except KeyError:
            raise UnknownVariable(str(v)) from None

    def parents(self, v: VariableId) -> tuple[VariableId, ...]:
        return self.node(v).parents

    def children(self, v: VariableId) -> tuple[VariableId, ...]:
        self.node(v)
        return self._children[v]

    @property
    def ids(self) -> list[VariableId]:
        return [n.id for n in self.nodes]

    @property
    def latents(self) -> list[VariableId]:
        return [n.id for n in self.nodes if not n.observed]

    @property
    def observed(self) -> list[VariableId]:
        return [n.id for n in self.nodes if n.observed]

    @property
    def parent_map(self) -> dict[VariableId, tuple[VariableId, ...]]:
        return {n.id: n.parents for n in self.nodes}

    def plate_of(self, name: str) -> Plate | None:
        for plate in self.plates:
            if name in plate.members:
                return plate
        return None


def _kahn(parents: Mapping) -> list:
    """Topological order with ties broken by mapping (declaration) order."""
    rank = {v: i for i, v in enumerate(parents)}
    indeg = {v: len(ps) for v, ps in parents.items()}
    kids = {v: [] for v in parents}
    for v, ps in parents.items():
        for p in ps:
            kids[p].append(v)
    ready = [rank[v] for v, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    keys = list(parents)
    out = []
    while ready:
        v = keys[heapq.heappop(ready)]
        out.append(v)
        for c in kids[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, rank[c])
    if len(out) != len(keys):
        stuck = [str(v) for v in keys if indeg[v] > 0]
        raise CycleDetected(f"directed cycle among {stuck}")
    return out


def topological_sort(model: GraphModel | Mapping) -> list[VariableId]:
    """Order nodes so that every parent precedes its children.

    Accepts a :class:`GraphModel` or a plain ``{node: parents}`` mapping.
    """
    if isinstance(model, GraphModel):
        return list(model._order)
    return _kahn(model)


def markov_blanket(model: GraphModel, v: VariableId) -> set[VariableId]:
    node = model.node(v)
    blanket = set(node.parents)
    for c in model.children(v):
        blanket.add(c)
        blanket.update(model.parents(c))
    blanket.discard(v)
    return blanket


def ancestral_sample(model: GraphModel, rng: np.random.Generator, size: int | None = None) -> dict:
    """Draw a full joint sample (latent and observed) in topological order.

    With ``size`` every value is an array of that many independent draws.
    """
    values: dict[VariableId, np.ndarray] = {}
    for v in topological_sort(model):
        node = model.node(v)
        params = node.dist.params(values[p] for p in node.parents)
        try:
            values[v] = node.dist.impl.sample(rng, *params, size=size)
        except InvalidParameters as exc:
            raise InvalidParameters(f"{v}: {exc}") from None
    return values


def log_density(model: GraphModel, v: VariableId, values: Mapping) -> np.ndarray:
    """Log density of one node given values for it and its parents."""
    node = model.node(v)
    try:
        x = values[v]
        params = node.dist.params(values[p] for p in node.parents)
    except KeyError as exc:
        raise MissingVariable(str(exc.args[0])) from None
    with np.errstate(divide="ignore", invalid="ignore"):
        out = node.dist.impl.logpdf(x, *params)
    return np.where(np.isnan(out), -np.inf, out)


def log_joint(model: GraphModel, a: Mapping, nodes: Iterable[VariableId] | None = None):
    """Sum of per-node log densities; vectorizes over array-valued assignments."""
    ids = model.ids if nodes is None else nodes
    missing = [str(v) for v in model.ids if v not in a] if nodes is None else []
    if missing:
        raise MissingVariable(f"assignment lacks {missing}")
    total = 0.0
    for v in ids:
        total = total + log_density(model, v, a)
    return total


def d_separated(model: GraphModel | Mapping, A: Iterable, B: Iterable, C: Iterable = ()) -> bool:
    """True iff every trail between ``A`` and ``B`` is blocked given ``C``.

    Uses the reachable-set formulation of Bayes-ball. ``model`` may be a
    :class:`GraphModel` or a ``{node: parents}`` mapping.
    """
    parents = model.parent_map if isinstance(model, GraphModel) else model
    A, B, C = set(A), set(B), set(C)
    for v in A | B | C:
        if v not in parents:
            raise UnknownVariable(str(v))
    if A & B:
        return False
    children: dict = {v: [] for v in parents}
    for v, ps in parents.items():
        for p in ps:
            children[p].append(v)

    # nodes with a descendant in C (including C itself) open colliders
    opens = set()
    frontier = list(C)
    while frontier:
        v = frontier.pop()
        if v not in opens:
            opens.add(v)
            frontier.extend(parents[v])

    # states: (node, arrived_from_child)
    seen = set()
    stack = [(a, True) for a in A]
    while stack:
        v, up = stack.pop()
        if (v, up) in seen:
            continue
        seen.add((v, up))
        if v not in C and v in B:
            return False
        if up:
            if v in C:
                continue
            stack.extend((p, True) for p in parents[v])
            stack.extend((c, False) for c in children[v])
        else:
            if v not in C:
                stack.extend((c, False) for c in children[v])
            if v in opens:
                stack.extend((p, True) for p in parents[v])
    return True
