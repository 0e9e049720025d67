from .fingerprint import BitFingerprint, WidthMismatch, fingerprint, tanimoto
from .groups import (
    BACKBONE,
    CATALOG,
    GROUP_LABELS,
    FunctionalGroupSegmentation,
    detect_functional_groups,
    group_token_spans,
)
from .smiles import (
    Atom,
    Bond,
    BondOrder,
    DanglingBond,
    DuplicateBond,
    IllegalCharacter,
    InvalidElement,
    MolGraph,
    SmilesError,
    SmilesTokenSeq,
    Token,
    TokenKind,
    UnbalancedParenthesis,
    UnclosedRingBond,
    UnterminatedBracket,
    parse_smiles,
    read_smiles,
    smiles_tokens_lenient,
    tokenize_smiles,
)


def smiles_similarity(a: str, b: str, radius: int = 2, width: int = 1024) -> float:
    """Fingerprint Tanimoto between two SMILES strings."""
    return tanimoto(fingerprint(read_smiles(a), radius, width), fingerprint(read_smiles(b), radius, width))
