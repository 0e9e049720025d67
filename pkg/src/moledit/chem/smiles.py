"""SMILES lexing and parsing into a small molecular graph.

Covers the organic subset, lowercase aromatic atoms, bracket atoms with
charge and explicit hydrogens, bond symbols ``- = # :``, ring closures
(``1``-``9`` and ``%nn``), branches and ``.`` component separators.
Stereo marks (``/``, ``\\``, ``@``) are lexed but carry no graph meaning.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field


class SmilesError(ValueError):
    """Base class for lexing and parsing failures."""


class IllegalCharacter(SmilesError):
    def __init__(self, char: str, position: int):
        self.char = char
        self.position = position
        super().__init__(f"illegal character {char!r} at position {position}")


class UnterminatedBracket(SmilesError):
    def __init__(self, position: int):
        self.position = position
        super().__init__(f"bracket atom opened at position {position} is never closed")


class UnclosedRingBond(SmilesError):
    pass


class UnbalancedParenthesis(SmilesError):
    pass


class InvalidElement(SmilesError):
    pass


class DanglingBond(SmilesError):
    pass


class DuplicateBond(SmilesError):
    pass


ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
# bracket atoms may name any of these; aromatic forms are lowercase
ELEMENTS = frozenset(
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn "
    "Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La "
    "Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi "
    "Po At Rn Fr Ra Ac Th Pa U Np Pu".split()
)
AROMATIC_BRACKET = frozenset({"b", "c", "n", "o", "p", "s", "se", "as", "te"})

BOND_CHARS = "-=#:/\\"


class TokenKind(str, enum.Enum):
    ATOM = "atom"
    BOND = "bond"
    RING = "ring"
    OPEN = "open"
    CLOSE = "close"
    DOT = "dot"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    start: int
    end: int

    @property
    def is_atom(self) -> bool:
        return self.kind is TokenKind.ATOM


@dataclass(frozen=True)
class SmilesTokenSeq:
    tokens: tuple[Token, ...]
    source: str

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, i: int) -> Token:
        return self.tokens[i]

    @property
    def lexemes(self) -> list[str]:
        return [t.text for t in self.tokens]


def tokenize_smiles(s: str) -> SmilesTokenSeq:
    if not s:
        raise SmilesError("empty SMILES string")
    tokens: list[Token] = []
    i, n = 0, len(s)
    while i < n:
        ch = s[i]
        if not ch.isascii():
            raise IllegalCharacter(ch, i)
        if ch == "[":
            j = s.find("]", i + 1)
            nxt = s.find("[", i + 1)
            if j < 0 or (0 <= nxt < j):
                raise UnterminatedBracket(i)
            tokens.append(Token(TokenKind.ATOM, s[i : j + 1], i, j + 1))
            i = j + 1
            continue
        two = s[i : i + 2]
        if two in ("Cl", "Br"):
            tokens.append(Token(TokenKind.ATOM, two, i, i + 2))
            i += 2
            continue
        if ch in ORGANIC or ch in AROMATIC_ORGANIC:
            tokens.append(Token(TokenKind.ATOM, ch, i, i + 1))
        elif ch in BOND_CHARS:
            tokens.append(Token(TokenKind.BOND, ch, i, i + 1))
        elif ch.isdigit():
            tokens.append(Token(TokenKind.RING, ch, i, i + 1))
        elif ch == "%":
            digits = s[i + 1 : i + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise IllegalCharacter(ch, i)
            tokens.append(Token(TokenKind.RING, s[i : i + 3], i, i + 3))
            i += 3
            continue
        elif ch == "(":
            tokens.append(Token(TokenKind.OPEN, ch, i, i + 1))
        elif ch == ")":
            tokens.append(Token(TokenKind.CLOSE, ch, i, i + 1))
        elif ch == ".":
            tokens.append(Token(TokenKind.DOT, ch, i, i + 1))
        else:
            raise IllegalCharacter(ch, i)
        i += 1
    return SmilesTokenSeq(tuple(tokens), s)


_LENIENT = re.compile(r"\[[^\]]*\]|Cl|Br|%\d\d|.", re.S)


def smiles_tokens_lenient(s: str) -> list[str]:
    """Best-effort lexemes for strings that may not be valid SMILES."""
    return _LENIENT.findall(s)


class BondOrder(enum.IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4


_BOND_SYMBOL = {
    "-": BondOrder.SINGLE,
    "/": BondOrder.SINGLE,
    "\\": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE,
    "#": BondOrder.TRIPLE,
    ":": BondOrder.AROMATIC,
}


@dataclass(frozen=True)
class Atom:
    element: str  # capitalized symbol, e.g. "C", "Cl"
    aromatic: bool = False
    charge: int = 0
    hydrogens: int | None = None  # explicit count from a bracket atom

    @property
    def symbol(self) -> str:
        return self.element.lower() if self.aromatic else self.element


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: BondOrder


@dataclass
class MolGraph:
    atoms: list[Atom]
    bonds: list[Bond]
    atom_token: list[int]
    tokens: SmilesTokenSeq | None = None
    _adj: list[list[tuple[int, BondOrder]]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._adj = [[] for _ in self.atoms]
        for bd in self.bonds:
            self._adj[bd.a].append((bd.b, bd.order))
            self._adj[bd.b].append((bd.a, bd.order))

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def neighbors(self, i: int) -> list[tuple[int, BondOrder]]:
        return self._adj[i]

    def degree(self, i: int) -> int:
        return len(self._adj[i])

    def bond_order(self, i: int, j: int) -> BondOrder | None:
        for k, o in self._adj[i]:
            if k == j:
                return o
        return None

    def components(self, atoms=None) -> list[list[int]]:
        """Connected components restricted to ``atoms`` (all atoms by default)."""
        pool = set(range(self.n_atoms)) if atoms is None else set(atoms)
        comps: list[list[int]] = []
        seen: set[int] = set()
        for start in sorted(pool):
            if start in seen:
                continue
            stack, comp = [start], []
            seen.add(start)
            while stack:
                u = stack.pop()
                comp.append(u)
                for v, _ in self._adj[u]:
                    if v in pool and v not in seen:
                        seen.add(v)
                        stack.append(v)
            comps.append(sorted(comp))
        return comps


_BRACKET = re.compile(
    r"^\[(?P<iso>\d+)?(?P<el>[A-Z][a-z]?|[a-z][a-z]?|\*)(?P<chiral>@{1,2})?"
    r"(?P<h>H\d*)?(?P<chg>[+-]\d*|\+\+|--)?(?::\d+)?\]$"
)


def _bracket_atom(text: str) -> Atom:
    m = _BRACKET.match(text)
    if not m:
        raise InvalidElement(f"cannot read bracket atom {text!r}")
    el = m["el"]
    aromatic = el[0].islower()
    if aromatic:
        if el not in AROMATIC_BRACKET:
            # "cl" style: a single aromatic letter followed by junk
            raise InvalidElement(f"unknown aromatic element {el!r} in {text!r}")
        element = el.capitalize()
    else:
        element = el
        if element not in ELEMENTS:
            raise InvalidElement(f"unknown element {el!r} in {text!r}")
    h = m["h"]
    hydrogens = 0 if h is None else (int(h[1:]) if len(h) > 1 else 1)
    chg = m["chg"]
    if chg is None:
        charge = 0
    elif chg in ("++", "--"):
        charge = 2 if chg == "++" else -2
    else:
        sign = 1 if chg[0] == "+" else -1
        charge = sign * (int(chg[1:]) if len(chg) > 1 else 1)
    return Atom(element, aromatic, charge, hydrogens)


def _organic_atom(text: str) -> Atom:
    if text in AROMATIC_ORGANIC:
        return Atom(text.upper(), True)
    return Atom(text)


def parse_smiles(t: SmilesTokenSeq | str) -> MolGraph:
    if isinstance(t, str):
        t = tokenize_smiles(t)
    atoms: list[Atom] = []
    atom_token: list[int] = []
    bonds: dict[tuple[int, int], BondOrder] = {}
    prev: int | None = None
    pending: tuple[BondOrder, int] | None = None  # (order, token index)
    branches: list[int | None] = []
    rings: dict[str, tuple[int, BondOrder | None, int]] = {}

    def connect(a: int, b: int, order: BondOrder | None) -> None:
        if a == b:
            raise DuplicateBond(f"atom {a} bonded to itself")
        key = (min(a, b), max(a, b))
        if key in bonds:
            raise DuplicateBond(f"atoms {a} and {b} bonded twice")
        if order is None:
            both_aromatic = atoms[a].aromatic and atoms[b].aromatic
            order = BondOrder.AROMATIC if both_aromatic else BondOrder.SINGLE
        bonds[key] = order

    for ti, tok in enumerate(t.tokens):
        kind = tok.kind
        if kind is TokenKind.ATOM:
            atom = _bracket_atom(tok.text) if tok.text[0] == "[" else _organic_atom(tok.text)
            atoms.append(atom)
            atom_token.append(ti)
            idx = len(atoms) - 1
            if prev is not None:
                connect(prev, idx, pending[0] if pending else None)
            elif pending is not None:
                raise DanglingBond(f"bond {t[pending[1]].text!r} at position {t[pending[1]].start} has no left atom")
            pending = None
            prev = idx
        elif kind is TokenKind.BOND:
            if pending is not None or prev is None:
                raise DanglingBond(f"bond {tok.text!r} at position {tok.start} has no left atom")
            pending = (_BOND_SYMBOL[tok.text], ti)
        elif kind is TokenKind.RING:
            if prev is None:
                raise DanglingBond(f"ring closure {tok.text!r} at position {tok.start} precedes any atom")
            label = tok.text.lstrip("%")
            order = pending[0] if pending else None
            if label in rings:
                other, other_order, _ = rings.pop(label)
                if order is not None and other_order is not None and order != other_order:
                    raise DanglingBond(f"ring closure {label} has conflicting bond orders")
                connect(other, prev, order if order is not None else other_order)
            else:
                rings[label] = (prev, order, ti)
            pending = None
        elif kind is TokenKind.OPEN:
            if prev is None:
                raise UnbalancedParenthesis(f"branch at position {tok.start} has no parent atom")
            if pending is not None:
                raise DanglingBond(f"bond before '(' at position {tok.start}")
            branches.append(prev)
        elif kind is TokenKind.CLOSE:
            if not branches:
                raise UnbalancedParenthesis(f"unmatched ')' at position {tok.start}")
            if pending is not None:
                raise DanglingBond(f"bond before ')' at position {tok.start}")
            prev = branches.pop()
        elif kind is TokenKind.DOT:
            if pending is not None:
                raise DanglingBond(f"bond before '.' at position {tok.start}")
            if branches:
                raise UnbalancedParenthesis(f"'.' inside a branch at position {tok.start}")
            prev = None
    if pending is not None:
        tok = t[pending[1]]
        raise DanglingBond(f"bond {tok.text!r} at position {tok.start} has no right atom")
    if branches:
        raise UnbalancedParenthesis("unclosed '('")
    if rings:
        label = sorted(rings)[0]
        raise UnclosedRingBond(f"ring bond {label} opened at position {t[rings[label][2]].start} is never closed")
    if not atoms:
        raise SmilesError(f"no atoms in {t.source!r}")
    bond_list = [Bond(a, b, o) for (a, b), o in sorted(bonds.items())]
    return MolGraph(atoms, bond_list, atom_token, t)


def read_smiles(s: str) -> MolGraph:
    return parse_smiles(tokenize_smiles(s))
