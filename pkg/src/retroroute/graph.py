"""Directed acyclic hypergraph of molecules and reaction arcs.

Nodes are deduplicated on their canonical string; arcs connect one product
node to a non-empty precursor set. Attaching an arc that would let a
molecule transitively require itself is rejected, which keeps every
selectable route a loop-free hyper-tree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

from .errors import CycleRejected, NotATree
from .models import ReactionClass


@dataclass
class MoleculeNode:
    id: int
    smiles: str
    in_stock: bool = False
    simplicity: float = 1.0
    expanded: bool = False
    expandable: bool = True
    # bookkeeping for termination diagnostics
    cycle_rejections: int = 0
    deferrals: int = 0

    def __post_init__(self):
        if not 0.0 <= self.simplicity <= 1.0:
            raise ValueError(f"simplicity {self.simplicity} outside [0,1]")


@dataclass(frozen=True)
class ReactionArc:
    """Immutable after attachment; the score is frozen at attach time."""

    id: int
    product: int
    precursors: Tuple[int, ...]
    reagents: FrozenSet[int]
    forward_likelihood: float
    reaction_class: ReactionClass
    arc_score: float


class HyperGraph:
    def __init__(self) -> None:
        self.nodes: Dict[int, MoleculeNode] = {}
        self.arcs: Dict[int, ReactionArc] = {}
        self.index: Dict[str, int] = {}
        self.arcs_by_product: Dict[int, List[int]] = {}
        self.root: Optional[int] = None
        # per-node bitmask of nodes reachable in the product -> precursor
        # direction (everything the node's synthesis can depend on)
        self._descendants: Dict[int, int] = {}
        self._next_node = 0
        self._next_arc = 0

    # --- nodes --------------------------------------------------------------

    def get_or_insert_node(self, smiles: str, **attrs) -> int:
        """Return the node for a canonical string, creating it once."""
        existing = self.index.get(smiles)
        if existing is not None:
            return existing
        node_id = self._next_node
        self._next_node += 1
        self.nodes[node_id] = MoleculeNode(id=node_id, smiles=smiles, **attrs)
        self.index[smiles] = node_id
        self.arcs_by_product[node_id] = []
        self._descendants[node_id] = 0
        if self.root is None:
            self.root = node_id
        return node_id

    def node(self, node_id: int) -> MoleculeNode:
        return self.nodes[node_id]

    # --- arcs ---------------------------------------------------------------

    def would_create_cycle(self, product: int, precursors: Iterable[int]) -> bool:
        """True iff some precursor's synthesis already depends on the product."""
        product_bit = 1 << product
        for p in precursors:
            if p == product:
                return True
            if self._descendants[p] & product_bit:
                return True
        return False

    def attach_arc(
        self,
        product: int,
        precursors: Iterable[int],
        forward_likelihood: float,
        reaction_class: ReactionClass,
        arc_score: float,
        reagents: Iterable[int] = (),
    ) -> int:
        """Attach a reaction arc, or raise CycleRejected.

        The caller treats a rejected arc as a terminated pathway branch.
        """
        precursors = tuple(precursors)
        if not precursors:
            raise ValueError("precursor set must be non-empty")
        if self.would_create_cycle(product, precursors):
            raise CycleRejected(
                f"arc {self.nodes[product].smiles!r} <- "
                f"{[self.nodes[p].smiles for p in precursors]} closes a cycle"
            )
        arc_id = self._next_arc
        self._next_arc += 1
        arc = ReactionArc(
            id=arc_id,
            product=product,
            precursors=precursors,
            reagents=frozenset(reagents),
            forward_likelihood=forward_likelihood,
            reaction_class=reaction_class,
            arc_score=arc_score,
        )
        self.arcs[arc_id] = arc
        self.arcs_by_product[product].append(arc_id)
        self._propagate_descendants(product, precursors)
        return arc_id

    def _propagate_descendants(self, product: int, precursors: Tuple[int, ...]) -> None:
        added = 0
        for p in precursors:
            added |= self._descendants[p] | (1 << p)
        # every node that can already reach the product gains the new mask
        if not added & ~self._descendants[product]:
            return
        product_bit = 1 << product
        self._descendants[product] |= added
        for node_id, mask in self._descendants.items():
            if mask & product_bit:
                self._descendants[node_id] = mask | added

    def arcs_of(self, product: int) -> List[int]:
        return list(self.arcs_by_product.get(product, ()))

    # --- route extraction ---------------------------------------------------

    def extract_route(self, arc_ids: Iterable[int]) -> "RouteTree":
        """Validate a selected arc set as a hyper-tree rooted at the graph root.

        Raises NotATree("multi-parent" | "disconnected" | "cycle").
        """
        if self.root is None:
            raise NotATree("disconnected")
        selected = [self.arcs[a] for a in arc_ids]
        by_product: Dict[int, ReactionArc] = {}
        for arc in selected:
            if arc.product in by_product:
                raise NotATree("multi-parent")
            by_product[arc.product] = arc
        # walk from the root; every selected arc must be reached exactly once
        ordered: List[int] = []
        leaves: Set[int] = set()
        visiting: Set[int] = set()

        def visit(node_id: int) -> None:
            if node_id in visiting:
                raise NotATree("cycle")
            arc = by_product.get(node_id)
            if arc is None:
                leaves.add(node_id)
                return
            visiting.add(node_id)
            ordered.append(arc.id)
            for p in arc.precursors:
                visit(p)
            visiting.remove(node_id)

        visit(self.root)
        if len(ordered) != len(selected):
            raise NotATree("disconnected")
        return RouteTree(root=self.root, arcs=tuple(ordered), leaves=frozenset(leaves))

    # --- consistency helpers (used by debug/test mode) ----------------------

    def recompute_descendants(self) -> Dict[int, int]:
        """From-scratch reachability, for validating the incremental bitsets."""
        masks = {n: 0 for n in self.nodes}
        changed = True
        while changed:
            changed = False
            for arc in self.arcs.values():
                add = 0
                for p in arc.precursors:
                    add |= masks[p] | (1 << p)
                if add & ~masks[arc.product]:
                    masks[arc.product] |= add
                    changed = True
                    for n, m in masks.items():
                        if m & (1 << arc.product) and add & ~m:
                            masks[n] = m | add
        return masks

    def is_acyclic(self) -> bool:
        for node_id, mask in self.recompute_descendants().items():
            if mask & (1 << node_id):
                return False
        return True

    # --- serialization ------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "root": self.root,
            "nodes": [
                {
                    "id": n.id,
                    "smiles": n.smiles,
                    "in_stock": n.in_stock,
                    "simplicity": n.simplicity,
                    "expanded": n.expanded,
                    "expandable": n.expandable,
                }
                for n in sorted(self.nodes.values(), key=lambda n: n.id)
            ],
            "arcs": [
                {
                    "id": a.id,
                    "product": a.product,
                    "precursors": list(a.precursors),
                    "reagents": sorted(a.reagents),
                    "likelihood": a.forward_likelihood,
                    "class": a.reaction_class.code,
                    "score": a.arc_score,
                }
                for a in sorted(self.arcs.values(), key=lambda a: a.id)
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "HyperGraph":
        g = cls()
        for entry in data["nodes"]:
            node_id = g.get_or_insert_node(
                entry["smiles"],
                in_stock=entry.get("in_stock", False),
                simplicity=entry.get("simplicity", 1.0),
                expanded=entry.get("expanded", False),
                expandable=entry.get("expandable", True),
            )
            if node_id != entry["id"]:
                raise ValueError("node ids must be dense and ordered in snapshots")
        g.root = data["root"]
        for entry in data["arcs"]:
            arc_id = g.attach_arc(
                product=entry["product"],
                precursors=tuple(entry["precursors"]),
                reagents=entry.get("reagents", ()),
                forward_likelihood=entry["likelihood"],
                reaction_class=ReactionClass.parse(entry["class"]),
                arc_score=entry["score"],
            )
            if arc_id != entry["id"]:
                raise ValueError("arc ids must be dense and ordered in snapshots")
        return g

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "HyperGraph":
        return cls.from_json(json.loads(text))

    # --- visualization ------------------------------------------------------

    def to_dot(self, arc_ids: Optional[Iterable[int]] = None) -> str:
        """DOT rendering: molecules as ellipses, arcs as square junctions."""
        arcs = (
            [self.arcs[a] for a in arc_ids]
            if arc_ids is not None
            else sorted(self.arcs.values(), key=lambda a: a.id)
        )
        used_nodes: Set[int] = set()
        for arc in arcs:
            used_nodes.add(arc.product)
            used_nodes.update(arc.precursors)
        if self.root is not None:
            used_nodes.add(self.root)
        lines = ["digraph routes {", "  rankdir=BT;"]
        for node_id in sorted(used_nodes):
            node = self.nodes[node_id]
            color = "green" if node.in_stock else "black"
            shape_attrs = f'label="{node.smiles}", shape=ellipse, color={color}'
            if node_id == self.root:
                shape_attrs += ", penwidth=2"
            lines.append(f'  n{node_id} [{shape_attrs}];')
        for arc in arcs:
            junction = f"a{arc.id}"
            label = f"{arc.reaction_class.code}\\nL={arc.forward_likelihood:.3f}"
            lines.append(
                f'  {junction} [label="{label}", shape=square, '
                f"width=0.15, fontsize=8];"
            )
            lines.append(f"  {junction} -> n{arc.product};")
            for p in arc.precursors:
                style = "dashed" if p in arc.reagents else "solid"
                lines.append(f"  n{p} -> {junction} [style={style}];")
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RouteTree:
    """A validated rooted hyper-tree (result of extract_route)."""

    root: int
    arcs: Tuple[int, ...]  # pre-order from the root
    leaves: FrozenSet[int]
