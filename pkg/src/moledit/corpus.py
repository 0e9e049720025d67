"""Synthetic molecule-caption pairs built from the functional-group catalog.

Each molecule is a straight carbon chain carrying one to three substituents.
Its caption states the compound class, one structural sentence per
substituent and one Function/Origin/Property fact tied to the main group, so
captions segment cleanly and the caption determines the SMILES.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

CHAIN_WORDS = {1: "one", 2: "two", 3: "three", 4: "four", 5: "five", 6: "six"}


@dataclass(frozen=True)
class GroupSpec:
    key: str
    label: str  # catalog label the detector reports
    smiles: str  # substituent written inside a branch on a chain carbon
    word: str  # substituent name used in captions
    noun: str  # class noun when this is the main group
    facts: tuple[str, ...]


GROUPS: tuple[GroupSpec, ...] = (
    GroupSpec("carboxyl", "carboxyl", "C(=O)O", "carboxy", "carboxylic acid",
              ("It has a role as an acidity regulator.", "It derives from acetic acid.", "It is a major species at pH 7.3.")),
    GroupSpec("ester", "ester", "C(=O)OC", "methoxycarbonyl", "methyl ester",
              ("It has a role as a flavouring agent.", "It derives from a fatty acid.", "It is a volatile liquid.")),
    GroupSpec("amide", "amide", "C(=O)N", "carbamoyl", "primary amide",
              ("It has a role as a plant growth regulator.", "It is isolated from soil bacteria.", "It is soluble in water.")),
    GroupSpec("carbonyl", "carbonyl", "=O", "oxo", "ketone",
              ("It has a role as a solvent.", "It is found in ripe fruit.", "It is a volatile liquid with a sweet odour.")),
    GroupSpec("hydroxyl", "hydroxyl", "O", "hydroxy", "alcohol",
              ("It has a role as an antiseptic agent.", "It derives from a D-mannitol.", "It is soluble in water.")),
    GroupSpec("amine", "amine", "N", "amino", "primary amine",
              ("It has a role as a neurotransmitter agent.", "It is isolated from decaying fish.", "It is a weak base with pKa near 10.")),
    GroupSpec("nitro", "nitro", "[N+](=O)[O-]", "nitro", "nitroalkane",
              ("It has a role as an explosive agent.", "It is obtained from nitration of alkanes.", "It is poorly soluble in water.")),
    GroupSpec("sulfonamide", "sulfonamide", "S(=O)(=O)N", "sulfamoyl", "sulfonamide",
              ("It has a role as an antibacterial agent.", "It derives from sulfanilamide.", "It is a stable crystalline solid.")),
    GroupSpec("thiol", "thiol", "S", "sulfanyl", "thiol",
              ("It has a role as an odorant agent.", "It is found in garlic.", "It is a reactive liquid with a strong odour.")),
    GroupSpec("ether", "ether", "OC", "methoxy", "methyl ether",
              ("It has a role as an anaesthetic agent.", "It derives from methanol.", "It is highly volatile.")),
    GroupSpec("fluoro", "halogen", "F", "fluoro", "organofluorine compound",
              ("It has a role as a refrigerant agent.", "It is obtained from fluorination of alkanes.", "It is a stable gas.")),
    GroupSpec("chloro", "halogen", "Cl", "chloro", "organochlorine compound",
              ("It has a role as a solvent.", "It is produced by marine algae.", "It is slightly soluble in water.")),
    GroupSpec("bromo", "halogen", "Br", "bromo", "organobromine compound",
              ("It has a role as a fumigant agent.", "It is isolated from red seaweed.", "It is a dense liquid with boiling point near 100 C.")),
    GroupSpec("iodo", "halogen", "I", "iodo", "organoiodine compound",
              ("It has a role as a contrast agent.", "It derives from iodine.", "It is sensitive to light and poorly stable.")),
    GroupSpec("phenyl", "aromatic ring", "c1ccccc1", "phenyl", "phenylalkane",
              ("It has a role as a fragrance agent.", "It is found in coal tar.", "It is insoluble in water.")),
    GroupSpec("cyclopentyl", "aliphatic ring", "C1CCCC1", "cyclopentyl", "cyclopentylalkane",
              ("It has a role as a fuel additive agent.", "It is obtained from petroleum.", "It is a volatile liquid.")),
    GroupSpec("cyclohexyl", "aliphatic ring", "C1CCCCC1", "cyclohexyl", "cyclohexylalkane",
              ("It has a role as a nonpolar solvent.", "It is obtained from benzene hydrogenation.", "It is insoluble in water.")),
)
GROUP_BY_KEY = {g.key: g for g in GROUPS}
# catalog priority decides the main group of a molecule
_PRIORITY = [g.key for g in GROUPS]

# vocabulary for captions that a pretraining run may hold as outdated knowledge
_OLD_CLASSES = ("alkaloid", "terpenoid", "steroid", "glycoside", "flavonoid", "peptide", "lipid", "polyketide")
_OLD_USES = ("tanning", "dyeing", "embalming", "lacquer", "varnish", "tincture", "poultice", "ointment")
_OLD_SOURCES = ("Kew", "Leiden", "Uppsala", "Padua", "Lyon", "Basel")


@dataclass(frozen=True)
class Molecule:
    chain: int
    substituents: tuple[tuple[int, str], ...]  # (position, group key), sorted by position

    @property
    def fact(self) -> int:
        # a function of the structure, so the caption is determined by the SMILES
        return (self.chain + sum(p for p, _ in self.substituents)) % 3

    @property
    def smiles(self) -> str:
        at = dict(self.substituents)
        parts = []
        for pos in range(1, self.chain + 1):
            key = at.get(pos)
            parts.append("C" if key is None else f"C({GROUP_BY_KEY[key].smiles})")
        return "".join(parts)

    @property
    def main_group(self) -> GroupSpec:
        keys = {k for _, k in self.substituents}
        return GROUP_BY_KEY[min(keys, key=_PRIORITY.index)]

    @property
    def caption(self) -> str:
        main = self.main_group
        sentences = [f"It is a {CHAIN_WORDS[self.chain]}-carbon {main.noun}."]
        for pos, key in self.substituents:
            sentences.append(f"It has a {GROUP_BY_KEY[key].word} group at position {pos}.")
        sentences.append(main.facts[self.fact])
        return " ".join(sentences)


def random_molecule(rng: np.random.Generator) -> Molecule:
    chain = int(rng.integers(2, 7))
    n_sub = int(rng.integers(1, min(3, chain) + 1))
    positions = sorted(int(p) for p in rng.choice(np.arange(1, chain + 1), size=n_sub, replace=False))
    keys = [GROUPS[int(i)].key for i in rng.choice(len(GROUPS), size=n_sub, replace=True)]
    return Molecule(chain, tuple(zip(positions, keys)))


def generate_corpus(size: int = 200, seed: int = 0) -> list[dict]:
    """Distinct molecules with captions, as dataset records."""
    rng = np.random.default_rng(seed)
    records: list[dict] = []
    seen: set[str] = set()
    # cover every group as a main group before sampling freely
    forced = [Molecule(int(rng.integers(2, 7)), ((1, g.key),)) for g in GROUPS]
    attempts = 0
    while len(records) < size:
        mol = forced.pop(0) if forced else random_molecule(rng)
        attempts += 1
        if attempts > 100 * (size + 1):
            raise RuntimeError(f"could not generate {size} distinct molecules")
        if mol.smiles in seen:
            continue
        seen.add(mol.smiles)
        records.append({"id": f"mol{len(records):04d}", "smiles": mol.smiles, "caption": mol.caption})
    return records


def outdated_caption(rng: np.random.Generator) -> str:
    """An obsolete-style caption sharing no content words with the templates."""
    cls = _OLD_CLASSES[int(rng.integers(len(_OLD_CLASSES)))]
    use = _OLD_USES[int(rng.integers(len(_OLD_USES)))]
    src = _OLD_SOURCES[int(rng.integers(len(_OLD_SOURCES)))]
    return f"Formerly catalogued in the {cls} class; once employed for {use}. Herbarium record {src}."


def outdated_vocabulary() -> list[str]:
    """Every word an outdated caption can use."""
    return [*outdated_caption(np.random.default_rng(0)).split(), *_OLD_CLASSES, *_OLD_USES, *_OLD_SOURCES]


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
