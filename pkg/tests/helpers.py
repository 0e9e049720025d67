from __future__ import annotations

import numpy as np

_ATOMS = ["C", "N", "O", "S", "F", "Cl", "Br", "c"]
_BONDS = ["", "", "", "="]


def random_tree_smiles(rng: np.random.Generator, max_atoms: int = 8) -> tuple[str, int, int]:
    """A ring-free SMILES string with its true atom and bond counts.

    Builds a random tree first, then writes it depth-first with branches, so
    the counts come from the tree rather than from any parsing.
    """
    n = int(rng.integers(1, max_atoms + 1))
    parent = [-1] + [int(rng.integers(0, i)) for i in range(1, n)]
    children: list[list[int]] = [[] for _ in range(n)]
    for i in range(1, n):
        children[parent[i]].append(i)
    # aromatic lowercase atoms are only legal in rings, so keep them aliphatic here
    elems = [_ATOMS[int(rng.integers(0, len(_ATOMS) - 1))] for _ in range(n)]

    def write(i: int) -> str:
        out = elems[i]
        kids = children[i]
        for k in kids[:-1]:
            out += "(" + _BONDS[int(rng.integers(0, len(_BONDS)))] + write(k) + ")"
        if kids:
            out += _BONDS[int(rng.integers(0, len(_BONDS)))] + write(kids[-1])
        return out

    return write(0), n, n - 1


def all_strings(alphabet: str, max_len: int) -> list[str]:
    out = [""]
    frontier = [""]
    for _ in range(max_len):
        frontier = [s + c for s in frontier for c in alphabet]
        out.extend(frontier)
    return out


def edit_distances_from(source: str, alphabet: str, max_len: int) -> dict[str, int]:
    """Breadth-first search over single-character edits, restricted to strings of length <= max_len.

    An optimal edit script between two strings never needs an intermediate
    longer than the longer endpoint, so the restriction is exact.
    """
    dist = {source: 0}
    frontier = [source]
    d = 0
    while frontier:
        d += 1
        nxt = []
        for s in frontier:
            n = len(s)
            cands = [s[:i] + s[i + 1 :] for i in range(n)]
            cands += [s[:i] + c + s[i + 1 :] for i in range(n) for c in alphabet if c != s[i]]
            if n < max_len:
                cands += [s[:i] + c + s[i:] for i in range(n + 1) for c in alphabet]
            for t in cands:
                if t not in dist:
                    dist[t] = d
                    nxt.append(t)
        frontier = nxt
    return dist
