"""Functional-group segmentation of a molecular graph.

Patterns are tried in catalog order.  Within one pattern, candidate matches
are accepted in order of their lowest atom index, skipping any that touch an
already-claimed atom.  Atoms left over form ``backbone`` segments, one per
connected component of the residual graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import networkx as nx

from ..expertise import ExpertiseSegmentation
from .smiles import BondOrder, MolGraph

BACKBONE = "backbone"
HALOGENS = frozenset({"F", "Cl", "Br", "I"})

Matcher = Callable[[MolGraph], Iterator[frozenset[int]]]


def _terminal_o(g: MolGraph, c: int, order: BondOrder) -> list[int]:
    return [
        o
        for o, bo in g.neighbors(c)
        if bo == order and g.atoms[o].element == "O" and g.degree(o) == 1
    ]


def _acyl_carbons(g: MolGraph) -> Iterator[tuple[int, int]]:
    """Non-aromatic carbons carrying a terminal C=O, with that oxygen."""
    for c, atom in enumerate(g.atoms):
        if atom.element == "C" and not atom.aromatic:
            for o in _terminal_o(g, c, BondOrder.DOUBLE):
                yield c, o


def _carboxyl(g):
    for c, o2 in _acyl_carbons(g):
        for o in _terminal_o(g, c, BondOrder.SINGLE):
            yield frozenset({c, o2, o})


def _ester(g):
    for c, o2 in _acyl_carbons(g):
        for o, bo in g.neighbors(c):
            if bo != BondOrder.SINGLE or g.atoms[o].element != "O" or g.degree(o) != 2:
                continue
            if all(g.atoms[x].element == "C" for x, _ in g.neighbors(o)):
                yield frozenset({c, o2, o})


def _amide(g):
    for c, o2 in _acyl_carbons(g):
        for n, bo in g.neighbors(c):
            if bo == BondOrder.SINGLE and g.atoms[n].element == "N" and not g.atoms[n].aromatic:
                yield frozenset({c, o2, n})


def _carbonyl(g):
    for c, o2 in _acyl_carbons(g):
        yield frozenset({c, o2})


def _hydroxyl(g):
    for o, atom in enumerate(g.atoms):
        if atom.element == "O" and not atom.aromatic and atom.charge == 0 and g.degree(o) == 1:
            (nb, bo), = g.neighbors(o)
            if bo == BondOrder.SINGLE and g.atoms[nb].element == "C":
                yield frozenset({o})


def _amine(g):
    for n, atom in enumerate(g.atoms):
        if atom.element != "N" or atom.aromatic or atom.charge < 0:
            continue
        nbs = g.neighbors(n)
        if all(g.atoms[x].element == "C" and bo == BondOrder.SINGLE for x, bo in nbs):
            yield frozenset({n})


def _nitro(g):
    for n, atom in enumerate(g.atoms):
        if atom.element != "N" or atom.charge != 1:
            continue
        dbl = [o for o, bo in g.neighbors(n) if bo == BondOrder.DOUBLE and g.atoms[o].element == "O" and g.degree(o) == 1]
        neg = [
            o
            for o, bo in g.neighbors(n)
            if bo == BondOrder.SINGLE and g.atoms[o].element == "O" and g.atoms[o].charge == -1 and g.degree(o) == 1
        ]
        if dbl and neg:
            yield frozenset({n, dbl[0], neg[0]})


def _sulfonamide(g):
    for s, atom in enumerate(g.atoms):
        if atom.element != "S":
            continue
        oxo = [o for o, bo in g.neighbors(s) if bo == BondOrder.DOUBLE and g.atoms[o].element == "O" and g.degree(o) == 1]
        nit = [x for x, bo in g.neighbors(s) if bo == BondOrder.SINGLE and g.atoms[x].element == "N"]
        if len(oxo) >= 2 and nit:
            yield frozenset({s, oxo[0], oxo[1], nit[0]})


def _thiol(g):
    for s, atom in enumerate(g.atoms):
        if atom.element == "S" and not atom.aromatic and g.degree(s) == 1:
            (nb, bo), = g.neighbors(s)
            if bo == BondOrder.SINGLE and g.atoms[nb].element == "C":
                yield frozenset({s})


def _ether(g):
    for o, atom in enumerate(g.atoms):
        if atom.element == "O" and not atom.aromatic and g.degree(o) == 2:
            if all(g.atoms[x].element == "C" and bo == BondOrder.SINGLE for x, bo in g.neighbors(o)):
                yield frozenset({o})


def _halogen(g):
    for i, atom in enumerate(g.atoms):
        if atom.element in HALOGENS:
            yield frozenset({i})


def ring_bonds(g: MolGraph) -> set[tuple[int, int]]:
    """Bonds lying on at least one cycle (the non-bridges)."""
    G = nx.Graph()
    G.add_nodes_from(range(g.n_atoms))
    G.add_edges_from((b.a, b.b) for b in g.bonds)
    bridges = {tuple(sorted(e)) for e in nx.bridges(G)}
    return {(b.a, b.b) for b in g.bonds} - bridges


def _ring_systems(g: MolGraph, aromatic: bool) -> Iterator[frozenset[int]]:
    rb = ring_bonds(g)
    keep = [(a, b) for a, b in rb if g.atoms[a].aromatic == aromatic and g.atoms[b].aromatic == aromatic]
    G = nx.Graph()
    G.add_edges_from(keep)
    for comp in nx.connected_components(G):
        yield frozenset(comp)


def _aromatic_ring(g):
    yield from _ring_systems(g, True)


def _aliphatic_ring(g):
    yield from _ring_systems(g, False)


CATALOG: tuple[tuple[str, Matcher], ...] = (
    ("carboxyl", _carboxyl),
    ("ester", _ester),
    ("amide", _amide),
    ("carbonyl", _carbonyl),
    ("hydroxyl", _hydroxyl),
    ("amine", _amine),
    ("nitro", _nitro),
    ("sulfonamide", _sulfonamide),
    ("thiol", _thiol),
    ("ether", _ether),
    ("halogen", _halogen),
    ("aromatic ring", _aromatic_ring),
    ("aliphatic ring", _aliphatic_ring),
)
GROUP_LABELS = tuple(label for label, _ in CATALOG)


@dataclass(frozen=True)
class FunctionalGroupSegmentation:
    segments: tuple[tuple[str, frozenset[int]], ...]
    n_atoms: int

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def labels(self) -> list[str]:
        return [label for label, _ in self.segments]

    def atom_segment(self) -> list[int]:
        out = [-1] * self.n_atoms
        for n, (_, atoms) in enumerate(self.segments):
            for a in atoms:
                out[a] = n
        return out

    def by_label(self) -> dict[str, list[frozenset[int]]]:
        out: dict[str, list[frozenset[int]]] = {}
        for label, atoms in self.segments:
            out.setdefault(label, []).append(atoms)
        return out


def detect_functional_groups(
    g: MolGraph, catalog: Sequence[tuple[str, Matcher]] = CATALOG
) -> FunctionalGroupSegmentation:
    claimed: set[int] = set()
    found: list[tuple[str, frozenset[int]]] = []
    for label, matcher in catalog:
        for match in sorted(set(matcher(g)), key=lambda m: (min(m), sorted(m))):
            if claimed.isdisjoint(match):
                claimed |= match
                found.append((label, match))
    residual = [i for i in range(g.n_atoms) if i not in claimed]
    for comp in g.components(residual):
        found.append((BACKBONE, frozenset(comp)))
    found.sort(key=lambda seg: min(seg[1]))
    return FunctionalGroupSegmentation(tuple(found), g.n_atoms)


def group_token_spans(g: MolGraph, seg: FunctionalGroupSegmentation) -> ExpertiseSegmentation:
    """Lift an atom-level segmentation onto the SMILES tokens of ``g``.

    Atom tokens take their atom's segment; every other token follows the
    nearest preceding atom token (or the first atom token if none precedes).
    """
    if g.tokens is None:
        raise ValueError("graph carries no token sequence")
    atom_seg = seg.atom_segment()
    token_atom = {ti: ai for ai, ti in enumerate(g.atom_token)}
    n_tok = len(g.tokens)
    first = atom_seg[0] if atom_seg else 0
    assignment: list[int] = []
    current: int | None = None
    for ti in range(n_tok):
        if ti in token_atom:
            current = atom_seg[token_atom[ti]]
        assignment.append(first if current is None else current)
    return ExpertiseSegmentation.from_assignment(seg.labels, assignment)
