from __future__ import annotations

import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moledit.chem import (
    BitFingerprint,
    BondOrder,
    DanglingBond,
    IllegalCharacter,
    InvalidElement,
    TokenKind,
    UnbalancedParenthesis,
    UnclosedRingBond,
    UnterminatedBracket,
    WidthMismatch,
    detect_functional_groups,
    fingerprint,
    group_token_spans,
    parse_smiles,
    read_smiles,
    smiles_similarity,
    tanimoto,
    tokenize_smiles,
)
from moledit.chem.fingerprint import HASH_KEY
from moledit.corpus import generate_corpus

from .helpers import random_tree_smiles


# --- lexer -----------------------------------------------------------------
@pytest.mark.parametrize(
    "smiles, lexemes",
    [
        ("CCO", ["C", "C", "O"]),
        ("C(Cl)=O", ["C", "(", "Cl", ")", "=", "O"]),
        ("c1ccccc1", ["c", "1", "c", "c", "c", "c", "c", "1"]),
        ("C[NH3+]", ["C", "[NH3+]"]),
        ("C%12CC%12", ["C", "%12", "C", "C", "%12"]),
        ("BrCBr", ["Br", "C", "Br"]),
    ],
)
def test_tokenize_examples(smiles, lexemes):
    assert tokenize_smiles(smiles).lexemes == lexemes


def test_bracket_and_two_letter_atoms_are_single_tokens():
    toks = tokenize_smiles("[N+](=O)[O-]Cl")
    assert [t.kind for t in toks] == [
        TokenKind.ATOM, TokenKind.OPEN, TokenKind.BOND, TokenKind.ATOM, TokenKind.CLOSE, TokenKind.ATOM, TokenKind.ATOM,
    ]


def test_token_spans_cover_source():
    seq = tokenize_smiles("CC(=O)[O-]")
    for tok in seq:
        assert seq.source[tok.start : tok.end] == tok.text


def test_unterminated_bracket():
    with pytest.raises(UnterminatedBracket):
        tokenize_smiles("C[")


def test_illegal_character_reports_position():
    with pytest.raises(IllegalCharacter) as err:
        tokenize_smiles("CC$O")
    assert err.value.position == 2


@given(st.lists(st.sampled_from(["C", "c", "N", "O", "Cl", "Br", "(", ")", "=", "#", "1", "2", "[NH4+]", "[O-]", "/", "%10"]), min_size=1, max_size=20))
def test_round_trip_lexemes(parts):
    s = "".join(parts)
    assert "".join(tokenize_smiles(s).lexemes) == s


# --- parser ----------------------------------------------------------------
def test_parse_ethanol():
    g = parse_smiles(tokenize_smiles("CCO"))
    assert g.n_atoms == 3
    assert [(b.a, b.b, b.order) for b in g.bonds] == [(0, 1, BondOrder.SINGLE), (1, 2, BondOrder.SINGLE)]


def test_parse_ring_closure():
    g = read_smiles("C1CC1")
    assert (g.n_atoms, len(g.bonds)) == (3, 3)


def test_branch_and_double_bond():
    g = read_smiles("CC(=O)O")
    assert g.bond_order(1, 2) == BondOrder.DOUBLE
    assert sorted(j for j, _ in g.neighbors(1)) == [0, 2, 3]


def test_aromatic_bonds():
    g = read_smiles("c1ccccc1")
    assert {b.order for b in g.bonds} == {BondOrder.AROMATIC}


def test_atom_token_alignment():
    g = read_smiles("C(=O)[O-]")
    assert g.atom_token == [0, 3, 5]
    assert g.atoms[2].charge == -1


@pytest.mark.parametrize(
    "smiles, error",
    [
        ("C1CC", UnclosedRingBond),
        ("C(C", UnbalancedParenthesis),
        ("CC)", UnbalancedParenthesis),
        ("C[Xx]", InvalidElement),
        ("CC=", DanglingBond),
    ],
)
def test_parse_errors(smiles, error):
    with pytest.raises(error):
        read_smiles(smiles)


@settings(max_examples=200)
@given(st.integers(0, 10_000))
def test_tree_smiles_oracle(seed):
    smiles, n_atoms, n_bonds = random_tree_smiles(np.random.default_rng(seed))
    g = read_smiles(smiles)
    assert (g.n_atoms, len(g.bonds)) == (n_atoms, n_bonds)


# --- functional groups -------------------------------------------------------
def _segments(smiles):
    g = read_smiles(smiles)
    return {(label, atoms) for label, atoms in detect_functional_groups(g).segments}


def test_ethanol_groups():
    assert _segments("CCO") == {("hydroxyl", frozenset({2})), ("backbone", frozenset({0, 1}))}


def test_acetic_acid_groups():
    assert _segments("CC(=O)O") == {("carboxyl", frozenset({1, 2, 3})), ("backbone", frozenset({0}))}


def test_acetic_acid_matches_exhaustive_oracle():
    # the only atom set that is a carbon with one =O and one -O(H) neighbour
    g = read_smiles("CC(=O)O")
    hits = []
    for c in range(g.n_atoms):
        if g.atoms[c].element != "C":
            continue
        nbrs = g.neighbors(c)
        dbl = [j for j, o in nbrs if g.atoms[j].element == "O" and o == BondOrder.DOUBLE]
        sgl = [j for j, o in nbrs if g.atoms[j].element == "O" and o == BondOrder.SINGLE and g.degree(j) == 1]
        if dbl and sgl:
            hits.append(frozenset({c, dbl[0], sgl[0]}))
    assert hits == [frozenset({1, 2, 3})]
    assert ("carboxyl", hits[0]) in _segments("CC(=O)O")


def test_benzene_is_one_aromatic_ring():
    assert _segments("c1ccccc1") == {("aromatic ring", frozenset(range(6)))}


@pytest.mark.parametrize(
    "smiles, label",
    [
        ("CC(=O)OC", "ester"),
        ("CC(=O)N", "amide"),
        ("CC(=O)C", "carbonyl"),
        ("CCN", "amine"),
        ("C[N+](=O)[O-]", "nitro"),
        ("CS(=O)(=O)N", "sulfonamide"),
        ("CCS", "thiol"),
        ("CCOC", "ether"),
        ("CCCl", "halogen"),
        ("C1CCCCC1", "aliphatic ring"),
    ],
)
def test_catalog_labels(smiles, label):
    assert label in {lab for lab, _ in _segments(smiles)}


def test_partition_on_corpus():
    for rec in generate_corpus(200, seed=3):
        g = read_smiles(rec["smiles"])
        seg = detect_functional_groups(g)
        atoms = [a for _, s in seg.segments for a in s]
        assert sorted(atoms) == list(range(g.n_atoms))
        assert len(seg) >= 1


def test_token_spans_follow_preceding_atom():
    g = read_smiles("C(=O)O")
    spans = group_token_spans(g, detect_functional_groups(g))
    assert spans.labels == ["carboxyl"]
    assert spans.segments[0].tokens == tuple(range(6))


def test_token_spans_ethanol():
    g = read_smiles("CCO")
    spans = group_token_spans(g, detect_functional_groups(g))
    by_label = {s.label: s.tokens for s in spans.segments}
    assert by_label == {"backbone": (0, 1), "hydroxyl": (2,)}


def test_empty_catalog_gives_single_backbone():
    g = read_smiles("CC(=O)O")
    seg = detect_functional_groups(g, catalog=())
    spans = group_token_spans(g, seg)
    assert seg.labels == ["backbone"]
    assert spans.segments[0].tokens == tuple(range(len(g.tokens)))


# --- fingerprints -------------------------------------------------------------
def _oracle_bits(smiles, radius=2, width=1024):
    """Enumerate circular environments recursively and hash them independently."""
    g = read_smiles(smiles)
    sym = {BondOrder.SINGLE: "-", BondOrder.DOUBLE: "=", BondOrder.TRIPLE: "#", BondOrder.AROMATIC: ":"}

    def inv(i):
        a = g.atoms[i]
        h = "" if a.hydrogens is None else f"H{a.hydrogens}"
        q = "" if a.charge == 0 else f"{a.charge:+d}"
        return (a.element.lower() if a.aromatic else a.element) + h + q

    def env(i, r):
        if r == 0:
            return inv(i)
        return env(i, r - 1) + "[" + ",".join(sorted(sym[o] + env(j, r - 1) for j, o in g.neighbors(i))) + "]"

    bits = set()
    for r in range(radius + 1):
        for i in range(g.n_atoms):
            digest = hashlib.blake2b(f"{r}:{env(i, r)}".encode(), digest_size=8, key=HASH_KEY, salt=bytes(16)).digest()
            bits.add(int.from_bytes(digest, "little") % width)
    return bits


def test_fingerprint_matches_environment_oracle():
    for s in ("CCO", "CCN", "c1ccccc1O", "CC(=O)[O-]"):
        assert set(np.flatnonzero(fingerprint(read_smiles(s)).bits)) == _oracle_bits(s)


def test_cco_ccn_tanimoto_oracle():
    a, b = _oracle_bits("CCO"), _oracle_bits("CCN")
    expected = len(a & b) / len(a | b)
    got = smiles_similarity("CCO", "CCN")
    assert 0.0 < got < 1.0
    assert got == pytest.approx(expected, abs=1e-12)


def test_fingerprint_deterministic():
    g = read_smiles("CC(=O)Oc1ccccc1")
    assert np.array_equal(fingerprint(g).bits, fingerprint(g).bits)
    assert fingerprint(g).count == int(fingerprint(g).bits.sum())


def test_methane_self_similarity():
    assert smiles_similarity("C", "C") == 1.0


def test_tanimoto_subset():
    a = BitFingerprint.from_indices([1, 2], 8)
    b = BitFingerprint.from_indices([1, 2, 3, 4], 8)
    assert tanimoto(a, b) == 0.5
    assert tanimoto(a, BitFingerprint.from_indices([5, 6], 8)) == 0.0
    assert tanimoto(BitFingerprint.from_indices([], 8), BitFingerprint.from_indices([], 8)) == 1.0


def test_tanimoto_width_mismatch():
    with pytest.raises(WidthMismatch):
        tanimoto(BitFingerprint.from_indices([1], 8), BitFingerprint.from_indices([1], 16))


@given(st.sets(st.integers(0, 63)), st.sets(st.integers(0, 63)))
def test_tanimoto_properties(x, y):
    a, b = BitFingerprint.from_indices(x, 64), BitFingerprint.from_indices(y, 64)
    t = tanimoto(a, b)
    assert 0.0 <= t <= 1.0
    assert t == tanimoto(b, a)
    if x:
        assert tanimoto(a, a) == 1.0
