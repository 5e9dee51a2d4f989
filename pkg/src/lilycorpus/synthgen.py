"""Seeded synthetic corpus generator.

Emits engraving sources restricted to constructs the note-event counter
fully supports (notes, chords, rests, skips, grace groups, ties, unfold
and volta repeats, unused and incipit variables), tracking the written
notehead count constructively while generating. Each file can ship with
a fake PostScript sidecar carrying exactly that many glyph references,
so count validation runs hermetically, and with a labels row so probing
runs over class-distinct style profiles.

Pieces generated with ``italiano=True`` use solfège pitch names and are
meant to pass through the pitch-language converter before any counting.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

LABELS_HEADER = "file_id,task,label"


@dataclass(frozen=True)
class ExpectedCounts:
    total: int
    unused_variable_notes: int = 0
    incipit_notes: int = 0


@dataclass(frozen=True)
class Profile:
    name: str
    pitches: tuple[str, ...]
    it_pitches: tuple[str, ...]
    octaves: tuple[str, ...]
    durations: tuple[str, ...]
    times: tuple[str, ...]
    tempi: tuple[tuple[int, int], ...]   # (unit, beats per minute)
    tempo_words: tuple[str, ...]
    keys: tuple[str, ...]                # "tonic \\major" fragments
    clefs: tuple[str, ...]
    dynamics: tuple[str, ...]
    articulations: tuple[str, ...]
    chord_rate: float
    rest_rate: float
    skip_rate: float
    grace_rate: float
    tie_rate: float
    unfold_rate: float
    volta_rate: float
    poly_rate: float
    composers: tuple[str, ...]


PROFILES = {
    "dance": Profile(
        name="dance",
        pitches=("c", "d", "e", "f", "g", "a", "b"),
        it_pitches=("do", "re", "mi", "fa", "sol", "la", "si"),
        octaves=("'", "''"),
        durations=("8", "4"),
        times=("3/4", "6/8"),
        tempi=((4, 120), (4, 132), (8, 96)),
        tempo_words=("Allegretto", "Vivace"),
        keys=("g \\major", "d \\major", "c \\major"),
        clefs=("treble",),
        dynamics=("\\p", "\\mp"),
        articulations=("-.", "->"),
        chord_rate=0.0,
        rest_rate=0.10,
        skip_rate=0.0,
        grace_rate=0.0,
        tie_rate=0.04,
        unfold_rate=0.05,
        volta_rate=0.20,
        poly_rate=0.0,
        composers=("Anna Keller", "Jean Moulin"),
    ),
    "aria": Profile(
        name="aria",
        pitches=("c", "d", "e", "fis", "g", "a", "bes", "b"),
        it_pitches=("do", "re", "mi", "fad", "sol", "la", "sib", "si"),
        octaves=("'", "''"),
        durations=("2", "4", "4."),
        times=("4/4",),
        tempi=((4, 60), (8, 72), (4, 54)),
        tempo_words=("Largo", "Adagio"),
        keys=("b \\minor", "e \\minor", "g \\major"),
        clefs=("treble",),
        dynamics=("\\mf", "\\mp", "\\pp"),
        articulations=("--",),
        chord_rate=0.0,
        rest_rate=0.08,
        skip_rate=0.0,
        grace_rate=0.15,
        tie_rate=0.22,
        unfold_rate=0.0,
        volta_rate=0.10,
        poly_rate=0.0,
        composers=("Maria Conti", "Paolo Verdi"),
    ),
    "toccata": Profile(
        name="toccata",
        pitches=("c", "d", "es", "f", "g", "as", "b"),
        it_pitches=("do", "re", "mib", "fa", "sol", "lab", "si"),
        octaves=("", "'"),
        durations=("16", "8"),
        times=("4/4", "2/2"),
        tempi=((2, 60), (4, 160), (4, 176)),
        tempo_words=("Presto", "Allegro"),
        keys=("c \\minor", "f \\minor"),
        clefs=("bass", "treble"),
        dynamics=("\\f", "\\ff"),
        articulations=("->", "-!"),
        chord_rate=0.25,
        rest_rate=0.10,
        skip_rate=0.08,
        grace_rate=0.0,
        tie_rate=0.0,
        unfold_rate=0.25,
        volta_rate=0.0,
        poly_rate=0.35,
        composers=("Henrik Dahl", "Olga Siri"),
    ),
}

_MELODY_NAMES = ("mainTheme", "melodyLine", "counterVoice", "bassLine")
_UNUSED_NAMES = ("sparePhrase", "draftFragment", "cadenzaAlt")
_INCIPIT_NAMES = ("incipitTheme", "fullIncipit")


def _pick_pitch(rng: random.Random, prof: Profile, italiano: bool) -> str:
    pool = prof.it_pitches if italiano else prof.pitches
    return rng.choice(pool) + rng.choice(prof.octaves)


def _note(rng, prof, italiano):
    text = _pick_pitch(rng, prof, italiano) + rng.choice(prof.durations)
    if rng.random() < prof.tie_rate:
        text += "~"
    elif rng.random() < 0.25:
        text += rng.choice(prof.articulations)
    return text, 1


def _chord(rng, prof, italiano):
    size = rng.randint(2, 3)
    members = [_pick_pitch(rng, prof, italiano) for _ in range(size)]
    return "<" + " ".join(members) + ">" + rng.choice(prof.durations), size


def _rest(rng, prof):
    return rng.choice(["r4", "r8", "r2", "R1", "R1*2"]), 0


def _atoms(rng, prof, italiano, n):
    """A flat run of n events plus interleaved zero-count decorations."""
    parts = []
    count = 0
    for _ in range(n):
        roll = rng.random()
        if roll < prof.chord_rate:
            text, c = _chord(rng, prof, italiano)
        elif roll < prof.chord_rate + prof.rest_rate:
            text, c = _rest(rng, prof)
        elif roll < prof.chord_rate + prof.rest_rate + prof.skip_rate:
            text, c = "s" + rng.choice(prof.durations), 0
        else:
            text, c = _note(rng, prof, italiano)
        parts.append(text)
        count += c
        if rng.random() < 0.08:
            parts.append(rng.choice(prof.dynamics))
        if rng.random() < 0.12:
            parts.append("|")
    return " ".join(parts), count


def _phrase(rng, prof, italiano):
    """One braced phrase: atoms with optional grace, repeat, poly inserts."""
    segs = []
    count = 0
    text, c = _atoms(rng, prof, italiano, rng.randint(6, 14))
    segs.append(text)
    count += c
    if rng.random() < prof.grace_rate:
        inner, ic = _atoms(rng, prof, italiano, rng.randint(1, 3))
        segs.append("\\grace { %s }" % inner)
        count += ic
    if rng.random() < prof.unfold_rate:
        inner, ic = _atoms(rng, prof, italiano, rng.randint(3, 6))
        n = rng.randint(2, 4)
        segs.append("\\repeat unfold %d { %s }" % (n, inner))
        count += n * ic
    elif rng.random() < prof.volta_rate:
        inner, ic = _atoms(rng, prof, italiano, rng.randint(4, 8))
        segs.append("\\repeat volta 2 { %s }" % inner)
        count += ic
    if rng.random() < prof.poly_rate:
        up, uc = _atoms(rng, prof, italiano, rng.randint(3, 6))
        down, dc = _atoms(rng, prof, italiano, rng.randint(3, 6))
        segs.append("<< { %s } \\\\ { %s } >>" % (up, down))
        count += uc + dc
    tail, tc = _atoms(rng, prof, italiano, rng.randint(3, 8))
    segs.append(tail)
    count += tc
    return " ".join(segs), count


def _variable_body(rng, prof, italiano):
    """Body of a melody variable; sometimes wrapped in \\relative."""
    opening = "\\clef \"%s\" \\key %s \\time %s" % (
        rng.choice(prof.clefs), rng.choice(prof.keys), rng.choice(prof.times)
    )
    phrase, count = _phrase(rng, prof, italiano)
    if rng.random() < 0.5:
        ref = _pick_pitch(rng, prof, italiano)
        body = "{ %s \\relative %s { %s } }" % (opening, ref, phrase)
    else:
        body = "{ %s %s }" % (opening, phrase)
    return body, count


def _header_block(rng, prof, title):
    return "\n".join([
        "\\header {",
        "  title = \"%s\"" % title,
        "  composer = \"%s\"" % rng.choice(prof.composers),
        "}",
    ])


def _tempo_line(rng, prof):
    unit, bpm = rng.choice(prof.tempi)
    word = rng.choice(prof.tempo_words)
    return "\\tempo \"%s\" %d = %d" % (word, unit, bpm)


def generate_piece(
    rng: random.Random, profile: str = "dance", italiano: bool = False
) -> tuple[str, ExpectedCounts]:
    """One self-contained source file plus its exact expected counts."""
    prof = PROFILES[profile]
    parts = ["\\version \"2.24.0\""]
    if italiano:
        parts.append("\\language \"italiano\"")
    title = "%s study %s" % (
        profile.title(), rng.choice(["in two parts", "for strings", "alla breve"])
    )
    parts.append(_header_block(rng, prof, title))
    parts.append("% generated material, safe to regenerate")

    parts.append(
        "globalSettings = { \\time %s %s }"
        % (rng.choice(prof.times), _tempo_line(rng, prof))
    )

    n_melodies = rng.randint(1, min(3, len(_MELODY_NAMES)))
    melody_names = list(_MELODY_NAMES[:n_melodies])
    total = 0
    for name in melody_names:
        body, count = _variable_body(rng, prof, italiano)
        parts.append("%s = %s" % (name, body))
        total += count

    unused = 0
    if rng.random() < 0.4:
        body, unused = _phrase(rng, prof, italiano)
        parts.append("%s = { %s }" % (rng.choice(_UNUSED_NAMES), body))

    incipit = 0
    if rng.random() < 0.3:
        body, incipit = _atoms(rng, prof, italiano, rng.randint(3, 6))
        parts.append("%s = { %s }" % (rng.choice(_INCIPIT_NAMES), body))

    if rng.random() < 0.3:
        parts.append(
            "formaPrima = { \\key %s \\time %s %s }"
            % (rng.choice(prof.keys), rng.choice(prof.times),
               _tempo_line(rng, prof))
        )

    inline = ""
    if rng.random() < 0.3:
        inline, ic = _atoms(rng, prof, italiano, rng.randint(2, 4))
        inline = " " + inline
        total += ic

    refs = " ".join("\\" + name for name in melody_names)
    parts.append("\n".join([
        "\\score {",
        "  \\new Staff {",
        "    \\globalSettings %s%s" % (refs, inline),
        "  }",
        "  \\layout { }",
        "  \\midi { }",
        "}",
    ]))
    source = "\n\n".join(parts) + "\n"
    return source, ExpectedCounts(total, unused, incipit)


_PS_SUFFIXES = ("s0", "s1", "s2", "d0", "cross")


def render_fake_ps(rng: random.Random, count: int) -> str:
    """Synthetic PostScript with exactly ``count`` notehead glyph calls,
    plus decoy names that must not match the scan pattern."""
    lines = [
        "%!PS-Adobe-3.0",
        "%%BoundingBox: 0 0 595 842",
        "%%Title: synthetic render",
        "/select-font { exch findfont exch scalefont setfont } def",
        "% decoys: /noteheads (bare), /rests.0, /clefs.G",
        "12 24 moveto /rests.0 glyphshow",
        "30 24 moveto /clefs.G glyphshow",
    ]
    for _ in range(count):
        x = rng.randint(10, 580)
        y = rng.randint(10, 830)
        suffix = rng.choice(_PS_SUFFIXES)
        lines.append("%d %d moveto /noteheads.%s glyphshow" % (x, y, suffix))
    lines.append("showpage")
    lines.append("%%EOF")
    return "\n".join(lines) + "\n"


def _write_labels(out_dir: Path, rows: list[tuple[str, str, str]]) -> None:
    body = "\n".join(
        ",".join(row) for row in sorted(rows)
    )
    (out_dir / "labels.csv").write_text(
        LABELS_HEADER + "\n" + body + "\n", encoding="utf-8"
    )


def _write_counts(out_dir: Path, truth: dict[str, ExpectedCounts]) -> None:
    payload = {
        file_id: {
            "total": exp.total,
            "unused_variable_notes": exp.unused_variable_notes,
            "incipit_notes": exp.incipit_notes,
        }
        for file_id, exp in sorted(truth.items())
    }
    (out_dir / "counts.json").write_text(
        json.dumps(payload, indent=2) + "\n", encoding="utf-8"
    )


def generate_corpus(
    out_dir: str | Path,
    n_files: int = 60,
    seed: int = 1337,
    profiles: tuple[str, ...] | None = None,
    italiano_share: float = 0.0,
    sidecars: bool = True,
) -> dict[str, ExpectedCounts]:
    """Write n_files single-file pieces, labels.csv and counts.json;
    profiles rotate so classes stay balanced."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chosen = tuple(profiles) if profiles else tuple(sorted(PROFILES))
    rng = random.Random(seed)
    truth: dict[str, ExpectedCounts] = {}
    rows = []
    for i in range(n_files):
        profile = chosen[i % len(chosen)]
        italiano = rng.random() < italiano_share
        source, expected = generate_piece(rng, profile, italiano)
        file_id = "%s_%03d" % (profile, i)
        (out / (file_id + ".ly")).write_text(source, encoding="utf-8")
        if sidecars:
            (out / (file_id + ".ps")).write_text(
                render_fake_ps(rng, expected.total), encoding="utf-8"
            )
        truth[file_id] = expected
        rows.append((file_id, "style", profile))
    _write_labels(out, rows)
    _write_counts(out, truth)
    return truth


def generate_project(
    out_dir: str | Path,
    rng: random.Random,
    profile: str = "dance",
    italiano: bool = False,
) -> ExpectedCounts:
    """Write one include-based workspace: header file with the include
    list, a macro file, movement files, and a score file."""
    prof = PROFILES[profile]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    macro_lines = ["\\version \"2.24.0\""]
    if italiano:
        macro_lines.append("\\language \"italiano\"")
    macro_lines.append(_header_block(
        rng, prof, "%s suite" % profile.title()))
    macro_lines.append(
        "globalSettings = { \\time %s %s }"
        % (rng.choice(prof.times), _tempo_line(rng, prof))
    )
    (out / "macros.ly").write_text(
        "\n\n".join(macro_lines) + "\n", encoding="utf-8"
    )

    movement_names = ("movOne", "movTwo", "movThree")
    n_movements = rng.randint(1, 3)
    total = 0
    used = []
    for name in movement_names[:n_movements]:
        body, count = _variable_body(rng, prof, italiano)
        (out / (name + ".ly")).write_text(
            "%s = %s\n" % (name, body), encoding="utf-8"
        )
        total += count
        used.append(name)

    refs = " ".join("\\" + name for name in used)
    (out / "score.ly").write_text(
        "\\score {\n  \\new Staff { \\globalSettings %s }\n"
        "  \\layout { }\n}\n" % refs,
        encoding="utf-8",
    )

    includes = ["macros.ly"] + [n + ".ly" for n in used] + ["score.ly"]
    header = "\\version \"2.24.0\"\n\n" + "\n".join(
        "\\include \"%s\"" % n for n in includes
    ) + "\n"
    (out / "header.ly").write_text(header, encoding="utf-8")
    return ExpectedCounts(total)


def generate_project_corpus(
    out_dir: str | Path,
    n_projects: int = 60,
    seed: int = 1337,
    profiles: tuple[str, ...] | None = None,
    italiano_share: float = 0.0,
) -> dict[str, ExpectedCounts]:
    """Write n_projects workspaces named after their class profile, plus
    labels.csv keyed by project name."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chosen = tuple(profiles) if profiles else tuple(sorted(PROFILES))
    rng = random.Random(seed)
    truth: dict[str, ExpectedCounts] = {}
    rows = []
    for i in range(n_projects):
        profile = chosen[i % len(chosen)]
        italiano = rng.random() < italiano_share
        name = "%s_%03d" % (profile, i)
        truth[name] = generate_project(out / name, rng, profile, italiano)
        rows.append((name, "style", profile))
    _write_labels(out, rows)
    _write_counts(out, truth)
    return truth
