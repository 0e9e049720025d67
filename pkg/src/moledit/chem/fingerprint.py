"""Hashed circular-environment fingerprints and Tanimoto similarity.

Each atom contributes one bit per radius ``r`` in ``0..radius``.  The
environment string at radius 0 is the atom invariant; at radius ``r`` it is
the radius ``r-1`` string followed by the sorted multiset of
``bond-symbol + neighbour string at r-1``.  Strings are hashed with keyed
BLAKE2b (8-byte digest, little-endian) and reduced modulo the width.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .smiles import BondOrder, MolGraph

HASH_KEY = b"moledit-fp"
_BOND_TEXT = {BondOrder.SINGLE: "-", BondOrder.DOUBLE: "=", BondOrder.TRIPLE: "#", BondOrder.AROMATIC: ":"}


class WidthMismatch(ValueError):
    pass


def hash64(text: str, seed: int = 0) -> int:
    h = hashlib.blake2b(text.encode("utf-8"), digest_size=8, key=HASH_KEY, salt=seed.to_bytes(16, "little"))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class BitFingerprint:
    bits: np.ndarray  # bool, shape (width,)
    count: int

    @property
    def width(self) -> int:
        return self.bits.shape[0]

    @classmethod
    def from_indices(cls, indices, width: int) -> BitFingerprint:
        bits = np.zeros(width, dtype=bool)
        bits[list(indices)] = True
        bits.setflags(write=False)
        return cls(bits, int(bits.sum()))


def atom_invariant(g: MolGraph, i: int) -> str:
    a = g.atoms[i]
    h = "" if a.hydrogens is None else f"H{a.hydrogens}"
    q = "" if a.charge == 0 else f"{a.charge:+d}"
    return f"{a.symbol}{h}{q}"


def environments(g: MolGraph, radius: int = 2) -> list[list[str]]:
    """``out[r][i]`` is the environment string of atom ``i`` at radius ``r``."""
    layers = [[atom_invariant(g, i) for i in range(g.n_atoms)]]
    for _ in range(radius):
        prev = layers[-1]
        layers.append(
            [
                prev[i] + "[" + ",".join(sorted(_BOND_TEXT[o] + prev[j] for j, o in g.neighbors(i))) + "]"
                for i in range(g.n_atoms)
            ]
        )
    return layers


def fingerprint(g: MolGraph, radius: int = 2, width: int = 1024, seed: int = 0) -> BitFingerprint:
    idx = {hash64(f"{r}:{env}", seed) % width for r, layer in enumerate(environments(g, radius)) for env in layer}
    return BitFingerprint.from_indices(idx, width)


def tanimoto(a: BitFingerprint, b: BitFingerprint) -> float:
    if a.width != b.width:
        raise WidthMismatch(f"fingerprint widths differ: {a.width} vs {b.width}")
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a.bits & b.bits)) / union
