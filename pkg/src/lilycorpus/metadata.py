"""Per-work metadata extraction, manifest serialization, and corpus
statistics.

Composer comes from filename conventions, form from a configured list
matched against the title, instruments from engraver directives, and
sections from ``forma`` variable blocks. Manifests serialize with a fixed
field order so identical inputs give byte-identical output.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .bindings import collect_bindings
from .blocks import parse_source
from .errors import EmptyCorpus, LilyCorpusError
from .lexer import TokenKind
from .taxonomy import TaxonomyDag, TempoMark, build_taxonomy, labels_for_section

UNKNOWN = "Unknown"

PERIODS = (
    "EarlyBaroque",
    "HighBaroque",
    "LateBaroque",
    "TransitionalClassical",
)

_YEAR_MIN, _YEAR_MAX = 1400, 1850
_TIME_SIG_RE = re.compile(r"^\d+/\d+$")
_INSTRUMENT_RE = re.compile(
    r'\\set\s+Staff\.midiInstrument\s*=\s*"([^"]*)"'
)
_INSTRUMENT_ANY_RE = re.compile(r"\\set\s+Staff\.midiInstrument\b")

# composer rules: (pattern, replacement) applied to the filename stem with
# re.match + expand; the result is title-cased for standardisation
DEFAULT_COMPOSER_RULES: tuple[tuple[str, str], ...] = (
    (r"^([A-Za-z]+)[_\-]", r"\1"),
)

DEFAULT_SECTION_PATTERN = "forma"


class YearOutOfRange(LilyCorpusError):
    def __init__(self, year: int):
        super().__init__(
            f"year {year} outside sanity bounds [{_YEAR_MIN}, {_YEAR_MAX}]"
        )
        self.year = year


class SchemaViolation(LilyCorpusError):
    pass


class MalformedDirective(UserWarning):
    pass


@dataclass
class SectionRecord:
    name: str
    key: str = ""
    scale: str = ""
    tempo: TempoMark | None = None
    time_signature: str = ""
    labels: set[str] = field(default_factory=set)


@dataclass
class ScoreManifest:
    file_id: str
    composer: str = UNKNOWN
    form: str = UNKNOWN
    instruments: set[str] = field(default_factory=set)
    sections: list[SectionRecord] = field(default_factory=list)
    period: str = UNKNOWN
    manuscript_ref: dict[str, str] | None = None


@dataclass
class StatsRow:
    value: str
    count: int
    percent: float
    file_presence_percent: float | None = None


@dataclass
class CorpusStats:
    n_files: int
    tables: dict[str, list[StatsRow]]


# --- extractors ---------------------------------------------------------------

def extract_composer(
    filename: str,
    rules: tuple[tuple[str, str], ...] = DEFAULT_COMPOSER_RULES,
) -> str:
    stem = Path(filename).stem
    for pattern, replacement in rules:
        m = re.match(pattern, stem)
        if m:
            return m.expand(replacement).title()
    return UNKNOWN


def load_forms(path: str | Path | None = None) -> list[str]:
    if path is None:
        path = default_forms_path()
    forms = [
        line.strip().lower()
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    if len(set(forms)) != len(forms):
        raise LilyCorpusError(f"{path}: duplicate form names")
    return forms


def extract_form(title_text: str, forms: list[str]) -> str:
    """Longest case-insensitive substring match; list order breaks ties."""
    low = title_text.lower()
    best = None
    for form in forms:
        if form in low:
            if best is None or len(form) > len(best):
                best = form
    return best if best is not None else UNKNOWN


def extract_instruments(source: str) -> set[str]:
    found = set(_INSTRUMENT_RE.findall(source))
    for m in _INSTRUMENT_ANY_RE.finditer(source):
        if not _INSTRUMENT_RE.match(source, m.start()):
            warnings.warn(
                "midiInstrument directive without a quoted value; skipped",
                MalformedDirective,
                stacklevel=2,
            )
    return found


def _parse_duration_token(text: str) -> tuple[int, int] | None:
    base = text.rstrip(".")
    if not base.isdigit():
        return None
    return int(base), len(text) - len(base)


def _scan_section_block(tokens) -> dict:
    """Pull \\key, \\time and \\tempo facts out of a forma block's tokens."""
    out: dict = {"key": "", "scale": "", "time_signature": "", "tempo": None}
    sig = [t for t in tokens if t.kind is not TokenKind.COMMENT]
    for i, tok in enumerate(sig):
        if tok.kind is not TokenKind.COMMAND:
            continue
        if tok.text == "\\key":
            if i + 2 < len(sig) and sig[i + 1].kind is TokenKind.WORD:
                mode = sig[i + 2]
                if mode.kind is TokenKind.COMMAND and mode.text in (
                    "\\major", "\\minor",
                ):
                    out["key"] = sig[i + 1].text
                    out["scale"] = mode.text[1:]
        elif tok.text == "\\time":
            if (
                i + 3 < len(sig)
                and sig[i + 1].kind is TokenKind.NUMBER
                and sig[i + 2].text == "/"
                and sig[i + 3].kind is TokenKind.NUMBER
            ):
                out["time_signature"] = f"{sig[i + 1].text}/{sig[i + 3].text}"
        elif tok.text == "\\tempo":
            j = i + 1
            if j < len(sig) and sig[j].kind is TokenKind.STRING:
                j += 1  # optional tempo text
            if (
                j + 2 < len(sig)
                and sig[j].kind is TokenKind.NUMBER
                and sig[j + 1].kind is TokenKind.EQUALS
                and sig[j + 2].kind is TokenKind.NUMBER
            ):
                dur = _parse_duration_token(sig[j].text)
                if dur is not None and sig[j + 2].text.isdigit():
                    unit, dots = dur
                    out["tempo"] = TempoMark(
                        unit=unit, bpm=int(sig[j + 2].text), dots=dots
                    )
    return out


def extract_sections(
    source: str,
    pattern: str = DEFAULT_SECTION_PATTERN,
    dag: TaxonomyDag | None = None,
) -> list[SectionRecord]:
    if dag is None:
        dag = build_taxonomy()
    tree = parse_source(source)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # shadowing warnings handled upstream
        bindings = collect_bindings(tree)
    pat = re.compile(pattern, re.IGNORECASE)
    records: list[SectionRecord] = []
    for name, binding in bindings.items():
        if not pat.search(name):
            continue
        section_name = pat.sub("", name).strip("_") or name
        span = binding.block_span or binding.value_span
        facts = _scan_section_block(tree.tokens[span[0]:span[1]])
        for missing, mark in (("key", "\\key"), ("time_signature", "\\time")):
            if not facts[missing]:
                warnings.warn(
                    f"section {name!r} has no {mark} mark", stacklevel=2
                )
        records.append(
            SectionRecord(
                name=section_name,
                key=facts["key"],
                scale=facts["scale"],
                tempo=facts["tempo"],
                time_signature=facts["time_signature"],
                labels=labels_for_section(section_name, dag, facts["tempo"]),
            )
        )
    return records


def bin_period(year: int) -> str:
    if not _YEAR_MIN <= year <= _YEAR_MAX:
        raise YearOutOfRange(year)
    if year < 1650:
        return "EarlyBaroque"
    if year < 1700:
        return "HighBaroque"
    if year <= 1750:
        return "LateBaroque"
    return "TransitionalClassical"


# --- sidecar years file ---------------------------------------------------------

def load_years(path: str | Path) -> dict[str, dict]:
    """Sidecar map file_id -> {year, estimated?, manuscript_source?,
    catalogue_number?}."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise SchemaViolation("years sidecar must be a JSON object")
    for file_id, entry in data.items():
        if not isinstance(entry, dict) or "year" not in entry:
            raise SchemaViolation(
                f"years sidecar entry for {file_id!r} lacks a year"
            )
    return data


# --- manifest ---------------------------------------------------------------------

def build_manifest(
    file_id: str,
    composer: str = UNKNOWN,
    form: str = UNKNOWN,
    instruments: set[str] | None = None,
    sections: list[SectionRecord] | None = None,
    period: str = UNKNOWN,
    manuscript_ref: dict[str, str] | None = None,
    forms: list[str] | None = None,
) -> ScoreManifest:
    manifest = ScoreManifest(
        file_id=file_id,
        composer=composer,
        form=form,
        instruments=set(instruments or ()),
        sections=list(sections or ()),
        period=period,
        manuscript_ref=dict(manuscript_ref) if manuscript_ref else None,
    )
    validate_manifest(manifest, forms=forms)
    return manifest


def validate_manifest(
    manifest: ScoreManifest, forms: list[str] | None = None
) -> None:
    if forms is None:
        forms = load_forms()
    if not manifest.file_id:
        raise SchemaViolation("file_id must be non-empty")
    if manifest.form != UNKNOWN and manifest.form not in forms:
        raise SchemaViolation(f"form {manifest.form!r} not in configured list")
    if manifest.period != UNKNOWN and manifest.period not in PERIODS:
        raise SchemaViolation(f"invalid period {manifest.period!r}")
    if manifest.manuscript_ref is not None:
        extra = set(manifest.manuscript_ref) - {"source", "catalogue_number"}
        if extra:
            raise SchemaViolation(f"unknown manuscript_ref fields: {extra}")
    for sec in manifest.sections:
        if sec.time_signature and not _TIME_SIG_RE.match(sec.time_signature):
            raise SchemaViolation(
                f"time signature {sec.time_signature!r} not <int>/<int>"
            )
        if sec.scale not in ("", "major", "minor"):
            raise SchemaViolation(f"invalid scale {sec.scale!r}")


def manifest_to_dict(manifest: ScoreManifest) -> dict:
    return {
        "file_id": manifest.file_id,
        "composer": manifest.composer,
        "form": manifest.form,
        "instruments": sorted(manifest.instruments),
        "period": manifest.period,
        "manuscript_ref": manifest.manuscript_ref,
        "sections": [
            {
                "name": sec.name,
                "key": sec.key,
                "scale": sec.scale,
                "tempo": (
                    None if sec.tempo is None else {
                        "unit": sec.tempo.unit,
                        "dots": sec.tempo.dots,
                        "bpm": sec.tempo.bpm,
                    }
                ),
                "time_signature": sec.time_signature,
                "labels": sorted(sec.labels),
            }
            for sec in manifest.sections
        ],
    }


def manifest_from_dict(
    payload: dict, forms: list[str] | None = None
) -> ScoreManifest:
    """Inverse of manifest_to_dict. Validates before returning."""
    if not isinstance(payload, dict):
        raise SchemaViolation("manifest payload must be a JSON object")
    try:
        sections = [
            SectionRecord(
                name=sec["name"],
                key=sec.get("key", ""),
                scale=sec.get("scale", ""),
                tempo=(
                    None if sec.get("tempo") is None else TempoMark(
                        unit=sec["tempo"]["unit"],
                        bpm=sec["tempo"]["bpm"],
                        dots=sec["tempo"]["dots"],
                    )
                ),
                time_signature=sec.get("time_signature", ""),
                labels=set(sec.get("labels", ())),
            )
            for sec in payload.get("sections", ())
        ]
        manifest = ScoreManifest(
            file_id=payload["file_id"],
            composer=payload.get("composer", UNKNOWN),
            form=payload.get("form", UNKNOWN),
            instruments=set(payload.get("instruments", ())),
            sections=sections,
            period=payload.get("period", UNKNOWN),
            manuscript_ref=payload.get("manuscript_ref"),
        )
    except (KeyError, TypeError) as exc:
        raise SchemaViolation(f"malformed manifest payload: {exc}") from exc
    validate_manifest(manifest, forms=forms)
    return manifest


def serialize_manifest(
    manifest: ScoreManifest, forms: list[str] | None = None
) -> str:
    validate_manifest(manifest, forms=forms)
    return json.dumps(manifest_to_dict(manifest), indent=2,
                      ensure_ascii=False) + "\n"


# --- corpus statistics ---------------------------------------------------------------

def _table(counts: dict[str, int], denominator: int) -> list[StatsRow]:
    rows = [
        StatsRow(value=v, count=c, percent=100.0 * c / denominator)
        for v, c in counts.items()
    ]
    rows.sort(key=lambda r: (-r.count, r.value))
    return rows


def corpus_stats(manifests: list[ScoreManifest]) -> CorpusStats:
    if not manifests:
        raise EmptyCorpus("corpus_stats needs at least one manifest")
    n_files = len(manifests)

    per_file: dict[str, dict[str, int]] = {
        "composer": {}, "form": {}, "period": {},
    }
    for m in manifests:
        for attr in per_file:
            value = getattr(m, attr)
            per_file[attr][value] = per_file[attr].get(value, 0) + 1

    instrument_counts: dict[str, int] = {}
    for m in manifests:
        for inst in m.instruments:
            instrument_counts[inst] = instrument_counts.get(inst, 0) + 1

    section_counts: dict[str, dict[str, int]] = {
        "key": {}, "time_signature": {}, "section_label": {},
    }
    for m in manifests:
        for sec in m.sections:
            if sec.key:
                key = f"{sec.key} {sec.scale}".strip()
                section_counts["key"][key] = section_counts["key"].get(key, 0) + 1
            if sec.time_signature:
                t = sec.time_signature
                section_counts["time_signature"][t] = \
                    section_counts["time_signature"].get(t, 0) + 1
            for label in sec.labels:
                section_counts["section_label"][label] = \
                    section_counts["section_label"].get(label, 0) + 1

    tables: dict[str, list[StatsRow]] = {}
    for attr, counts in per_file.items():
        tables[attr] = _table(counts, n_files)
    total_inst = sum(instrument_counts.values())
    inst_rows = _table(instrument_counts, total_inst or 1)
    for row in inst_rows:
        row.file_presence_percent = 100.0 * row.count / n_files
    tables["instrument"] = inst_rows
    for attr, counts in section_counts.items():
        total = sum(counts.values())
        tables[attr] = _table(counts, total or 1)

    return CorpusStats(n_files=n_files, tables=tables)


def stats_to_csv(stats: CorpusStats, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for attr, rows in sorted(stats.tables.items()):
        path = out_dir / f"stats_{attr}.csv"
        lines = []
        has_presence = any(r.file_presence_percent is not None for r in rows)
        header = "value,count,percent"
        if has_presence:
            header += ",file_presence_percent"
        lines.append(header)
        for r in rows:
            line = f"{_csv_escape(r.value)},{r.count},{r.percent:.4f}"
            if has_presence:
                line += f",{r.file_presence_percent:.4f}"
            lines.append(line)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    return written


def _csv_escape(value: str) -> str:
    if any(ch in value for ch in ',"\n'):
        return '"' + value.replace('"', '""') + '"'
    return value


def stats_to_json(stats: CorpusStats) -> str:
    payload = {
        "n_files": stats.n_files,
        "tables": {
            attr: [
                {
                    "value": r.value,
                    "count": r.count,
                    "percent": round(r.percent, 4),
                    **(
                        {"file_presence_percent":
                         round(r.file_presence_percent, 4)}
                        if r.file_presence_percent is not None else {}
                    ),
                }
                for r in rows
            ]
            for attr, rows in sorted(stats.tables.items())
        },
    }
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


def default_forms_path() -> Path:
    return Path(resources.files("lilycorpus.data") / "forms.txt")
