"""Section-name taxonomy DAG, quarter-note BPM arithmetic, and tempo
categories.

Section names form a multi-parent DAG rooted at five fixed categories.
Classification returns the ancestor set of a normalized name; sections
with uninformative names fall back to a tempo category computed from
their metronome mark.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

from .errors import LilyCorpusError

ROOTS = frozenset({"speed", "intention", "suite", "no_tempo", "non_descriptive"})
SPEED_LEAVES = ("slow", "mid", "fast", "very_fast")
UNCLASSIFIED = "unclassified"

_VALID_UNITS = frozenset({1, 2, 4, 8, 16, 32})


class CycleDetected(LilyCorpusError):
    def __init__(self, cycle: list[str]):
        super().__init__("taxonomy cycle: " + " -> ".join(cycle))
        self.cycle = cycle


class DanglingEdge(LilyCorpusError):
    def __init__(self, child: str, parent: str):
        super().__init__(
            f"edge {child!r} -> {parent!r}: parent is neither a root nor a "
            "defined node"
        )
        self.child = child
        self.parent = parent


class InvalidDuration(LilyCorpusError):
    def __init__(self, unit: int):
        super().__init__(f"beat unit must be one of {sorted(_VALID_UNITS)}, got {unit}")
        self.unit = unit


class NonPositiveBpm(LilyCorpusError):
    def __init__(self, value):
        super().__init__(f"BPM must be positive, got {value}")
        self.value = value


@dataclass(frozen=True)
class TempoMark:
    unit: int
    bpm: int
    dots: int = 0


@dataclass
class TaxonomyDag:
    nodes: set[str]
    parents: dict[str, set[str]]     # child -> parents
    aliases: dict[str, str]

    def ancestors(self, name: str) -> set[str]:
        out: set[str] = set()
        frontier = list(self.parents.get(name, ()))
        while frontier:
            node = frontier.pop()
            if node in out:
                continue
            out.add(node)
            frontier.extend(self.parents.get(node, ()))
        return out


@dataclass
class TempoCategoryTable:
    # (name, inclusive lower bound) in increasing bound order
    entries: list[tuple[str, Fraction]]


def normalize_name(name: str) -> str:
    folded = unicodedata.normalize("NFD", name.strip().lower())
    return "".join(ch for ch in folded if not unicodedata.combining(ch))


def build_taxonomy(spec_file: str | Path | None = None) -> TaxonomyDag:
    if spec_file is None:
        spec_file = default_taxonomy_path()
    parents: dict[str, set[str]] = {}
    aliases: dict[str, str] = {}
    edges: list[tuple[str, str]] = []
    for lineno, raw in enumerate(
        Path(spec_file).read_text(encoding="utf-8").splitlines(), 1
    ):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("alias "):
            parts = line.split()
            if len(parts) != 3:
                raise LilyCorpusError(
                    f"{spec_file}:{lineno}: alias lines take two names"
                )
            aliases[normalize_name(parts[1])] = normalize_name(parts[2])
            continue
        if "->" not in line:
            raise LilyCorpusError(
                f"{spec_file}:{lineno}: expected `child -> parent` or alias"
            )
        child, parent = (normalize_name(p) for p in line.split("->", 1))
        if not child or not parent:
            raise LilyCorpusError(f"{spec_file}:{lineno}: empty edge endpoint")
        edges.append((child, parent))
        parents.setdefault(child, set()).add(parent)

    defined = set(parents) | ROOTS
    for child, parent in edges:
        if parent not in defined:
            raise DanglingEdge(child, parent)
    for variant, canonical in aliases.items():
        if canonical not in defined:
            raise DanglingEdge(variant, canonical)

    _check_acyclic(parents)
    nodes = set(ROOTS) | set(parents)
    for ps in parents.values():
        nodes |= ps
    return TaxonomyDag(nodes=nodes, parents=parents, aliases=aliases)


def _check_acyclic(parents: dict[str, set[str]]) -> None:
    WHITE, GREY, BLACK = 0, 1, 2
    state = {n: WHITE for n in parents}

    def visit(node: str, path: list[str]) -> None:
        state[node] = GREY
        path.append(node)
        for parent in sorted(parents.get(node, ())):
            if state.get(parent, BLACK if parent not in parents else WHITE) == GREY:
                cycle = path[path.index(parent):] + [parent]
                raise CycleDetected(cycle)
            if state.get(parent) == WHITE:
                visit(parent, path)
        path.pop()
        state[node] = BLACK

    for node in sorted(parents):
        if state[node] == WHITE:
            visit(node, [])


def classify_section_name(name: str, dag: TaxonomyDag) -> set[str]:
    norm = normalize_name(name)
    norm = dag.aliases.get(norm, norm)
    if norm not in dag.nodes:
        return {UNCLASSIFIED}
    if norm in ROOTS:
        return {norm}
    return dag.ancestors(norm)


def quarter_bpm(mark: TempoMark) -> Fraction:
    if mark.unit not in _VALID_UNITS:
        raise InvalidDuration(mark.unit)
    if mark.dots < 0:
        raise InvalidDuration(mark.unit)
    if mark.bpm <= 0:
        raise NonPositiveBpm(mark.bpm)
    dotted = 2 - Fraction(1, 2 ** mark.dots)
    return Fraction(mark.bpm) * Fraction(4, mark.unit) * dotted


def load_tempo_table(path: str | Path | None = None) -> TempoCategoryTable:
    if path is None:
        path = default_tempo_table_path()
    entries: list[tuple[str, Fraction]] = []
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), 1
    ):
        if not line.strip():
            continue
        try:
            name, bound = line.split("\t")
            entries.append((name, Fraction(bound)))
        except ValueError:
            raise LilyCorpusError(
                f"{path}:{lineno}: expected name<TAB>lower_bound"
            ) from None
    if not entries:
        raise LilyCorpusError(f"{path}: empty tempo table")
    if entries[0][1] != 0:
        raise LilyCorpusError("first tempo interval must start at 0")
    bounds = [b for _, b in entries]
    if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
        raise LilyCorpusError("tempo bounds must be strictly increasing")
    return TempoCategoryTable(entries)


def tempo_category(qbpm, table: TempoCategoryTable) -> str:
    if qbpm <= 0:
        raise NonPositiveBpm(qbpm)
    name = table.entries[0][0]
    for entry_name, bound in table.entries:
        if qbpm >= bound:
            name = entry_name
        else:
            break
    return name


def labels_for_section(
    name: str,
    dag: TaxonomyDag,
    mark: TempoMark | None = None,
    table: TempoCategoryTable | None = None,
) -> set[str]:
    """Taxonomy labels for a section; uninformative names fall back to the
    tempo category of their metronome mark when one is available."""
    labels = classify_section_name(name, dag)
    if labels == {UNCLASSIFIED} and mark is not None:
        if table is None:
            table = load_tempo_table()
        leaf = tempo_category(quarter_bpm(mark), table)
        return {leaf} | dag.ancestors(leaf)
    return labels


def default_taxonomy_path() -> Path:
    return Path(resources.files("lilycorpus.data") / "taxonomy.txt")


def default_tempo_table_path() -> Path:
    return Path(resources.files("lilycorpus.data") / "tempo_categories.tsv")
