"""Inverting a graphical model's dependency structure.

Latents are visited in reverse of a chosen topological order; each one takes
as inverse parents the members of its Markov blanket that are observed or
come later in that order. Consecutive fully-dependent latents are then merged
into joint blocks, and plate-replicated blocks are tagged for weight sharing.
"""

from __future__ import annotations

import itertools
from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np

from .graph import GraphModel, VariableId, d_separated, markov_blanket, topological_sort


class InvalidOrder(ValueError):
    pass


@dataclass(frozen=True)
class InverseFactor:
    targets: tuple[VariableId, ...]
    conditioners: tuple[VariableId, ...]
    share_group: str | None = None
    stage: int = 0

    def __post_init__(self):
        if set(self.targets) & set(self.conditioners):
            raise ValueError("targets and conditioners overlap")

    def describe(self) -> str:
        tgt = ", ".join(map(str, self.targets))
        cond = ", ".join(map(str, self.conditioners)) or "-"
        group = f"  [shared: {self.share_group}]" if self.share_group else ""
        return f"({tgt}) | ({cond}){group}"


@dataclass(frozen=True)
class InverseModel:
    factors: tuple[InverseFactor, ...]
    source_order: tuple[VariableId, ...]
    observed_parents: dict  # observed id -> tuple of observed ids

    @property
    def latents(self) -> list[VariableId]:
        return [t for f in self.factors for t in f.targets]

    def parent_map(self) -> dict[VariableId, tuple[VariableId, ...]]:
        """The inverse graph: block members are autoregressive in target order."""
        parents = dict(self.observed_parents)
        for f in self.factors:
            for k, t in enumerate(f.targets):
                parents[t] = tuple(f.targets[:k]) + f.conditioners
        return parents

    def describe(self) -> str:
        lines = [f"inverse factors: {len(self.factors)}"]
        for i, f in enumerate(self.factors):
            lines.append(f"  {i:3d}: {f.describe()}")
        return "\n".join(lines)


def _check_order(model: GraphModel, order: Sequence[VariableId]) -> None:
    latents = model.latents
    if sorted(order) != sorted(latents) or len(set(order)) != len(order):
        raise InvalidOrder("latent order must list every latent exactly once")
    pos = {v: i for i, v in enumerate(order)}
    for v in order:
        for p in model.parents(v):
            if p in pos and pos[p] > pos[v]:
                raise InvalidOrder(f"{p} must precede its child {v}")
    # latent -> observed -> latent paths constrain the order too
    for v in order:
        anc = _latent_ancestors_through_observed(model, v)
        for a in anc:
            if pos[a] > pos[v]:
                raise InvalidOrder(f"{a} must precede {v}")


def _latent_ancestors_through_observed(model: GraphModel, v: VariableId) -> set:
    out, stack = set(), [p for p in model.parents(v) if model.node(p).observed]
    seen = set()
    while stack:
        y = stack.pop()
        if y in seen:
            continue
        seen.add(y)
        for p in model.parents(y):
            if model.node(p).observed:
                stack.append(p)
            else:
                out.add(p)
    return out


def _induced_blanket(model: GraphModel, v: VariableId, keep: set) -> set:
    blanket = {p for p in model.parents(v) if p in keep}
    for c in model.children(v):
        if c in keep:
            blanket.add(c)
            blanket.update(p for p in model.parents(c) if p in keep)
    blanket.discard(v)
    return blanket


def _order_conditioners(conds, source_order, model: GraphModel):
    """Latents in source order, then observed in declaration order."""
    pos = {v: i for i, v in enumerate(source_order)}
    lat = sorted((c for c in conds if c in pos), key=pos.__getitem__)
    decl = {v: i for i, v in enumerate(model.ids)}
    obs = sorted((c for c in conds if c not in pos), key=decl.__getitem__)
    return tuple(lat + obs)


def build_inverse(
    model: GraphModel,
    latent_order: Sequence[VariableId] | None = None,
    stages: Sequence[Sequence[VariableId]] | None = None,
) -> InverseModel:
    """Construct singleton inverse factors from Markov-blanket intersections.

    With the default single stage this is the plain reversal: each latent
    ``x_i`` gets ``mb(x_i) & ({x_{i+1}, ..., x_N} | observed)``.

    ``stages`` splits the latents into consecutive groups (e.g. time slices).
    Stage ``s`` is inverted inside the sub-model holding stages ``<= s`` and
    the observed nodes whose parents lie there, treating earlier stages as
    given. Factors are emitted stage by stage, latest latent first within a
    stage.
    """
    order = tuple(latent_order) if latent_order is not None else tuple(
        v for v in topological_sort(model) if not model.node(v).observed)
    _check_order(model, order)
    if stages is None:
        stages = [order]
    stages = [tuple(s) for s in stages]
    if sorted(v for s in stages for v in s) != sorted(order):
        raise InvalidOrder("stages must partition the latents")
    pos = {v: i for i, v in enumerate(order)}
    for s in stages:
        if [pos[v] for v in s] != sorted(pos[v] for v in s):
            raise InvalidOrder("stage members must follow latent_order")

    observed = model.observed
    factors = []
    seen: set = set()
    for k, stage in enumerate(stages):
        seen |= set(stage)
        for v in seen:
            for p in model.parents(v):
                if not model.node(p).observed and p not in seen:
                    raise InvalidOrder(f"{p} is needed by stage {k} but appears later")
        keep = set(seen)
        grew = True
        while grew:
            grew = False
            for y in observed:
                if y not in keep and all(p in keep for p in model.parents(y)):
                    keep.add(y)
                    grew = True
        earlier = seen - set(stage)
        for i in reversed(range(len(stage))):
            x = stage[i]
            later = set(stage[i + 1:]) | earlier | {y for y in observed if y in keep}
            conds = _induced_blanket(model, x, keep) & later
            factors.append(InverseFactor((x,), _order_conditioners(conds, order, model), stage=k))

    obs_pos = {y: j for j, y in enumerate(observed)}
    observed_parents = {
        y: tuple(sorted((m for m in markov_blanket(model, y) if m in obs_pos and obs_pos[m] > obs_pos[y]),
                        key=obs_pos.__getitem__))
        for y in observed
    }
    return InverseModel(tuple(factors), order, observed_parents)


def group_joint_blocks(inv: InverseModel) -> InverseModel:
    """Greedily merge consecutive factors that depend on each other fully.

    A factor joins the running block when it conditions on every block
    target and its remaining conditioners equal or overlap the block's.
    The merged block conditions on the union of those remaining sets.
    Scans repeat until nothing merges, so the result is a fixpoint.
    """
    order = inv.source_order
    pos = {v: i for i, v in enumerate(order)}

    def sort_conds(conds):
        lat = sorted((c for c in conds if c in pos), key=pos.__getitem__)
        rest = [c for c in conds if c not in pos]
        obs = [y for y in inv.observed_parents if y in rest]
        obs += [c for c in rest if c not in inv.observed_parents]
        return tuple(lat + obs)

    factors = list(inv.factors)
    while True:
        merged = _merge_pass(factors, sort_conds)
        if len(merged) == len(factors):
            return replace(inv, factors=tuple(merged))
        factors = merged


def _merge_pass(factors, sort_conds) -> list[InverseFactor]:
    merged: list[InverseFactor] = []
    for f in factors:
        if merged:
            block = merged[-1]
            residual = set(f.conditioners) - set(block.targets)
            joins = (
                block.stage == f.stage
                and block.share_group == f.share_group
                and set(block.targets) <= set(f.conditioners)
                and (residual == set(block.conditioners) or residual & set(block.conditioners))
            )
            if joins:
                merged[-1] = replace(
                    block,
                    targets=block.targets + f.targets,
                    conditioners=sort_conds(set(block.conditioners) | residual),
                )
                continue
        merged.append(f)
    return merged


def _signature(f: InverseFactor, model: GraphModel):
    anchor = f.targets[0].index
    if anchor is None or any(t.index is None for t in f.targets):
        return None
    plates = {model.plate_of(t.name) for t in f.targets}
    if None in plates or len(plates) != 1:
        return None
    plate = plates.pop()

    def rel(v: VariableId):
        node = model.node(v)
        off = None if v.index is None else v.index - anchor
        return (v.name, off, node.dist.family, node.role)

    sig = (plate.name, tuple(rel(t) for t in f.targets), tuple(rel(c) for c in f.conditioners))
    return sig


def assign_share_groups(inv: InverseModel, model: GraphModel) -> InverseModel:
    """Tag plate-replicated factors with identical local structure.

    A structure seen once is left unshared, except inside a plate of size one,
    where it is the sole replicate.
    """
    sigs = [_signature(f, model) for f in inv.factors]
    single = {p.name for p in model.plates if p.count == 1}
    counts: dict = {}
    for s in sigs:
        if s is not None:
            counts[s] = counts.get(s, 0) + 1
    names: dict = {}
    out = []
    for f, s in zip(inv.factors, sigs):
        if s is None or (counts[s] < 2 and s[0] not in single):
            out.append(replace(f, share_group=None))
            continue
        if s not in names:
            base = s[0]
            taken = set(names.values())
            name, k = base, 1
            while name in taken:
                k += 1
                name = f"{base}{k}"
            names[s] = name
        out.append(replace(f, share_group=names[s]))
    return replace(inv, factors=tuple(out))


def invert(model: GraphModel, latent_order=None, stages=None) -> InverseModel:
    """build_inverse -> group_joint_blocks -> assign_share_groups."""
    inv = build_inverse(model, latent_order, stages)
    return assign_share_groups(group_joint_blocks(inv), model)


@dataclass
class PropositionReport:
    holds: bool
    checked: int
    counterexample: tuple | None = None

    def __bool__(self) -> bool:
        return self.holds


def _all_triples(variables, max_set=None):
    variables = list(variables)
    n = len(variables)
    labels = range(4)  # 0: unused, 1: A, 2: B, 3: C
    for assign in itertools.product(labels, repeat=n):
        A = frozenset(v for v, a in zip(variables, assign) if a == 1)
        B = frozenset(v for v, a in zip(variables, assign) if a == 2)
        if not A or not B:
            continue
        # (A, B) and (B, A) are equivalent queries
        if min(variables.index(v) for v in A) > min(variables.index(v) for v in B):
            continue
        C = frozenset(v for v, a in zip(variables, assign) if a == 3)
        if max_set is not None and max(len(A), len(B)) > max_set:
            continue
        yield A, B, C


def check_proposition_1(
    model: GraphModel,
    inv: InverseModel,
    trials: int | None = None,
    rng: np.random.Generator | None = None,
    max_set: int | None = None,
) -> PropositionReport:
    """Check that every d-separation in the inverse graph also holds in the original.

    With ``trials=None`` all disjoint ``(A, B, C)`` triples are enumerated
    (feasible up to about 8 variables); otherwise ``trials`` random triples
    are drawn. ``max_set`` bounds ``|A|`` and ``|B|`` during enumeration.
    """
    inverse = inv.parent_map()
    variables = model.ids
    if trials is None:
        triples = _all_triples(variables, max_set)
    else:
        rng = rng or np.random.default_rng(0)

        def draw():
            for _ in range(trials):
                labels = rng.integers(0, 4, size=len(variables))
                if not (labels == 1).any():
                    labels[rng.integers(len(variables))] = 1
                if not (labels == 2).any():
                    free = np.flatnonzero(labels != 1)
                    if len(free) == 0:
                        continue
                    labels[rng.choice(free)] = 2
                pick = lambda k: frozenset(v for v, a in zip(variables, labels) if a == k)
                yield pick(1), pick(2), pick(3)
        triples = draw()
    checked = 0
    for A, B, C in triples:
        checked += 1
        if d_separated(inverse, A, B, C) and not d_separated(model, A, B, C):
            return PropositionReport(False, checked, (A, B, C))
    return PropositionReport(True, checked)
