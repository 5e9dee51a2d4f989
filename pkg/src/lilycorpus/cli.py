"""Command line frontend.

Subcommands cover the whole corpus pipeline: flatten, strip-headers,
convert-pitch, tokenize, chunk, mask, metadata, stats, validate,
embed-baseline, probe.

Exit codes: 0 success; 2 bad input, bad config, or any corpus error;
3 note-count validation found mismatches (or had nothing to compare);
4 an external engraver was missing, timed out, or otherwise failed.

Flags win over values from an optional JSON config file (--config), which
in turn wins over built-in defaults. Commands that take a directory
process its *.ly files sorted by stem, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .blocks import parse_source, strip_headers
from .embed import DEFAULT_DIM, baseline_embed, make_projection_table
from .errors import EmptyCorpus, ExternalToolError, LilyCorpusError
from .lexer import TokenKind
from .metadata import (
    DEFAULT_SECTION_PATTERN,
    UNKNOWN,
    bin_period,
    build_manifest,
    corpus_stats,
    extract_composer,
    extract_form,
    extract_instruments,
    extract_sections,
    load_forms,
    load_years,
    manifest_from_dict,
    serialize_manifest,
    stats_to_csv,
    stats_to_json,
)
from .pitchlang import convert_pitch_language
from .probe import (
    DEFAULT_K,
    DEFAULT_MIN_COUNT,
    VALID_LAYERS,
    ProbeConfig,
    records_to_jsonl,
    run_probe,
)
from .project import flatten_workspace
from .report import write_report
from .tokenizer import (
    DEFAULT_CHUNK_SIZE,
    DEFAULT_MASK_RATE,
    Chunk,
    chunk as chunk_doc,
    default_added_tokens_path,
    load_vocabulary,
    sample_mlm_masks,
    sample_vocab_paths,
    tokenize as tokenize_text,
)
from .validate import (
    DEFAULT_INCIPIT_PATTERN,
    DEFAULT_TIMEOUT,
    batch_validate,
    reports_to_jsonl,
    summary_to_csv,
)

DEFAULT_SEED = 1337


# --- shared plumbing ---------------------------------------------------------------

def _load_config(args) -> dict:
    path = getattr(args, "config", None)
    if path is None:
        return {}
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise LilyCorpusError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise LilyCorpusError(f"{path}: config must be a JSON object")
    return payload


def _setting(args, config: dict, name: str, default):
    """Flag value if given, else config file value, else default."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    return config.get(name, default)


def _resolve_workers(args, config: dict) -> int:
    workers = int(_setting(args, config, "workers", 1))
    if workers < 1:
        raise LilyCorpusError(f"--workers must be >= 1, got {workers}")
    # accepted as an upper bound; execution stays sequential so output
    # ordering and bytes never depend on scheduling
    return workers


def _ly_files(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(path.glob("*.ly"), key=lambda p: p.stem)
        if not files:
            raise EmptyCorpus(f"no .ly files under {path}")
        return files
    if path.is_file():
        return [path]
    raise LilyCorpusError(f"no such file or directory: {path}")


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _read_text(path: Path) -> str:
    return path.read_text(encoding="utf-8")


def _load_vocab(args, config: dict):
    default_vocab, default_merges = sample_vocab_paths()
    vocab_file = _setting(args, config, "vocab", default_vocab)
    merges_file = _setting(args, config, "merges", default_merges)
    added_file = _setting(args, config, "added", default_added_tokens_path())
    return load_vocabulary(vocab_file, merges_file, added_file)


def _parse_layers(value) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [part for part in str(value).split(",") if part.strip()]
    try:
        layers = tuple(int(item) for item in items)
    except (TypeError, ValueError) as exc:
        raise LilyCorpusError(f"bad layer list {value!r}") from exc
    if not layers:
        raise LilyCorpusError("layer list is empty")
    for layer in layers:
        if layer not in VALID_LAYERS:
            raise LilyCorpusError(
                f"layer {layer} not in {sorted(VALID_LAYERS)}"
            )
    return layers


def _read_jsonl_rows(path: str | Path) -> list[dict]:
    rows = []
    for line_no, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except ValueError as exc:
            raise LilyCorpusError(
                f"{path} line {line_no}: not valid JSON: {exc}"
            ) from exc
        if not isinstance(row, dict):
            raise LilyCorpusError(f"{path} line {line_no}: not an object")
        rows.append(row)
    return rows


def _rows_to_jsonl(rows: list[dict]) -> str:
    return "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in rows)


def _header_title(source: str) -> str:
    """First title = "..." entry inside a header block, quotes stripped."""
    tree = parse_source(source)
    headers = sorted(
        tree.blocks_by_command("header"), key=lambda b: b.open_index
    )
    for node in headers:
        toks = tree.tokens[node.open_index + 1:node.close_index]
        sig = [t for t in toks if t.kind is not TokenKind.COMMENT]
        for i, tok in enumerate(sig):
            if (
                tok.kind is TokenKind.WORD
                and tok.text == "title"
                and i + 2 < len(sig)
                and sig[i + 1].kind is TokenKind.EQUALS
                and sig[i + 2].kind is TokenKind.STRING
            ):
                return sig[i + 2].text[1:-1]
    return ""


# --- subcommands ---------------------------------------------------------------

def cmd_flatten(args) -> int:
    config = _load_config(args)
    _resolve_workers(args, config)
    header_name = _setting(args, config, "header_name", None)
    _emit(flatten_workspace(Path(args.workspace), header_name), args.out)
    return 0


def _transform_files(args, transform) -> int:
    config = _load_config(args)
    _resolve_workers(args, config)
    files = _ly_files(Path(args.path))
    if args.out_dir is not None:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for f in files:
            (out_dir / f.name).write_text(
                transform(_read_text(f)), encoding="utf-8"
            )
        return 0
    if len(files) > 1:
        raise LilyCorpusError("--out-dir is required for a directory input")
    _emit(transform(_read_text(files[0])), args.out)
    return 0


def cmd_strip_headers(args) -> int:
    return _transform_files(args, strip_headers)


def cmd_convert_pitch(args) -> int:
    return _transform_files(args, convert_pitch_language)


def cmd_tokenize(args) -> int:
    config = _load_config(args)
    _resolve_workers(args, config)
    vocab = _load_vocab(args, config)
    rows = []
    for f in _ly_files(Path(args.path)):
        doc = tokenize_text(_read_text(f), vocab)
        rows.append(
            {"file_id": f.stem, "n_tokens": len(doc.ids),
             "ids": list(doc.ids)}
        )
    _emit(_rows_to_jsonl(rows), args.out)
    return 0


def cmd_chunk(args) -> int:
    config = _load_config(args)
    _resolve_workers(args, config)
    vocab = _load_vocab(args, config)
    size = int(_setting(args, config, "size", DEFAULT_CHUNK_SIZE))
    rows = []
    for f in _ly_files(Path(args.path)):
        doc = tokenize_text(_read_text(f), vocab)
        for index, piece in enumerate(chunk_doc(doc, vocab, size)):
            rows.append(
                {"file_id": f.stem, "chunk_index": index,
                 "ids": list(piece.ids), "content_len": piece.content_len}
            )
    _emit(_rows_to_jsonl(rows), args.out)
    return 0


def cmd_mask(args) -> int:
    config = _load_config(args)
    _resolve_workers(args, config)
    vocab = _load_vocab(args, config)
    rate = float(_setting(args, config, "rate", DEFAULT_MASK_RATE))
    seed = int(_setting(args, config, "seed", DEFAULT_SEED))
    rows = []
    for index, row in enumerate(_read_jsonl_rows(args.chunks)):
        try:
            piece = Chunk(list(row["ids"]), int(row["content_len"]))
            file_id = row["file_id"]
            chunk_index = row["chunk_index"]
        except (KeyError, TypeError, ValueError) as exc:
            raise LilyCorpusError(
                f"{args.chunks}: chunk row {index} is malformed: {exc}"
            ) from exc
        example = sample_mlm_masks(piece, vocab, rate=rate, seed=seed + index)
        rows.append(
            {"file_id": file_id, "chunk_index": chunk_index,
             "input_ids": example.input_ids, "labels": example.labels,
             "masked_positions": example.masked_positions}
        )
    _emit(_rows_to_jsonl(rows), args.out)
    return 0


def cmd_metadata(args) -> int:
    config = _load_config(args)
    _resolve_workers(args, config)
    forms_path = _setting(args, config, "forms", None)
    forms = load_forms(forms_path)
    pattern = _setting(
        args, config, "section_pattern", DEFAULT_SECTION_PATTERN
    )
    years_path = _setting(args, config, "years", None)
    years = None
    if years_path is not None:
        try:
            years = load_years(years_path)
        except ValueError as exc:
            raise LilyCorpusError(f"{years_path}: {exc}") from exc

    files = _ly_files(Path(args.path))
    if args.out_dir is None and len(files) > 1:
        raise LilyCorpusError("--out-dir is required for a directory input")
    out_dir = None
    if args.out_dir is not None:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    for f in files:
        source = _read_text(f)
        title = _header_title(source)
        period = UNKNOWN
        manuscript_ref = None
        if years is not None and f.stem in years:
            entry = years[f.stem]
            period = bin_period(int(entry["year"]))
            ref = {}
            if "manuscript_source" in entry:
                ref["source"] = str(entry["manuscript_source"])
            if "catalogue_number" in entry:
                ref["catalogue_number"] = str(entry["catalogue_number"])
            manuscript_ref = ref or None
        manifest = build_manifest(
            f.stem,
            composer=extract_composer(f.name),
            form=extract_form(title, forms) if title else UNKNOWN,
            instruments=extract_instruments(source),
            sections=extract_sections(source, pattern),
            period=period,
            manuscript_ref=manuscript_ref,
            forms=forms,
        )
        text = serialize_manifest(manifest, forms=forms)
        if out_dir is not None:
            (out_dir / f"{f.stem}.json").write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
    return 0


def cmd_stats(args) -> int:
    config = _load_config(args)
    _resolve_workers(args, config)
    forms_path = _setting(args, config, "forms", None)
    forms = load_forms(forms_path) if forms_path is not None else None
    manifest_dir = Path(args.manifest_dir)
    paths = sorted(manifest_dir.glob("*.json"), key=lambda p: p.stem)
    if not paths:
        raise EmptyCorpus(f"no manifest .json files under {manifest_dir}")
    manifests = []
    for p in paths:
        try:
            payload = json.loads(_read_text(p))
        except ValueError as exc:
            raise LilyCorpusError(f"{p}: not valid JSON: {exc}") from exc
        manifests.append(manifest_from_dict(payload, forms=forms))
    stats = corpus_stats(manifests)
    out_dir = Path(args.out_dir)
    written = stats_to_csv(stats, out_dir)
    json_path = out_dir / "stats.json"
    json_path.write_text(stats_to_json(stats), encoding="utf-8")
    written.append(json_path)
    for path in written:
        print(path)
    return 0


def cmd_validate(args) -> int:
    config = _load_config(args)
    _resolve_workers(args, config)
    engraver = _setting(args, config, "engraver", None)
    incipit = _setting(
        args, config, "incipit_pattern", DEFAULT_INCIPIT_PATTERN
    )
    timeout = float(_setting(args, config, "timeout", DEFAULT_TIMEOUT))
    summary, reports = batch_validate(
        Path(args.corpus_dir), engraver, incipit, timeout
    )
    if args.out_dir is not None:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "reports.jsonl").write_text(
            reports_to_jsonl(reports), encoding="utf-8"
        )
        (out_dir / "summary.csv").write_text(
            summary_to_csv(summary), encoding="utf-8"
        )
    ratio = (
        "" if summary.perfect_ratio is None
        else f"{summary.perfect_ratio:.6f}"
    )
    print(
        f"n_files={summary.n_files} n_compared={summary.n_compared} "
        f"perfect_ratio={ratio}"
    )
    return 0 if summary.perfect_ratio == 1.0 else 3


def cmd_embed_baseline(args) -> int:
    config = _load_config(args)
    _resolve_workers(args, config)
    vocab = _load_vocab(args, config)
    dim = int(_setting(args, config, "dim", DEFAULT_DIM))
    seed = int(_setting(args, config, "seed", DEFAULT_SEED))
    size = int(_setting(args, config, "chunk_size", DEFAULT_CHUNK_SIZE))
    layers = _parse_layers(_setting(args, config, "layers", "3,6,9,12"))
    table = make_projection_table(dim=dim, seed=seed)
    records = []
    for f in _ly_files(Path(args.path)):
        doc = tokenize_text(_read_text(f), vocab)
        records.extend(
            baseline_embed(
                doc, vocab, f.stem, dim=dim, seed=seed, layers=layers,
                chunk_size=size, projections=table,
            )
        )
    _emit(records_to_jsonl(records), args.out)
    return 0


def cmd_probe(args) -> int:
    config = _load_config(args)
    _resolve_workers(args, config)
    layers = _parse_layers(_setting(args, config, "layers", "3,6,9,12"))
    k = int(_setting(args, config, "k", DEFAULT_K))
    min_count = int(_setting(args, config, "min_count", DEFAULT_MIN_COUNT))
    seed = int(_setting(args, config, "seed", DEFAULT_SEED))
    model_tag = _setting(args, config, "model_tag", None)
    probe_config = None
    epochs = _setting(args, config, "epochs", None)
    step_size = _setting(args, config, "step_size", None)
    l2_penalty = _setting(args, config, "l2_penalty", None)
    if any(v is not None for v in (epochs, step_size, l2_penalty)):
        defaults = ProbeConfig()
        probe_config = ProbeConfig(
            epochs=int(epochs) if epochs is not None else defaults.epochs,
            step_size=(
                float(step_size) if step_size is not None
                else defaults.step_size
            ),
            l2_penalty=(
                float(l2_penalty) if l2_penalty is not None
                else defaults.l2_penalty
            ),
        )
    report = run_probe(
        args.embeddings, args.labels, layers=layers, k=k, seed=seed,
        min_count=min_count, config=probe_config, model_tag=model_tag,
    )
    written = write_report(
        report, Path(args.out_dir), stem=args.stem,
        figure=not args.no_figure,
    )
    for path in written:
        print(path)
    return 0


# --- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default settings")
    common.add_argument(
        "--workers", type=int,
        help="upper bound on parallel workers (default 1)",
    )

    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument(
        "--seed", type=int, help=f"RNG seed (default {DEFAULT_SEED})"
    )

    vocab = argparse.ArgumentParser(add_help=False)
    vocab.add_argument("--vocab", help="base vocabulary JSON/TSV file")
    vocab.add_argument("--merges", help="BPE merges file")
    vocab.add_argument("--added", help="added-tokens TSV file")

    parser = argparse.ArgumentParser(
        prog="lilycorpus",
        description="Corpus engineering toolkit for LilyPond sources.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "flatten", parents=[common],
        help="resolve a project workspace into one source file",
    )
    p.add_argument("workspace", help="directory with a header file")
    p.add_argument("--header-name", dest="header_name")
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=cmd_flatten)

    for name, func, what in (
        ("strip-headers", cmd_strip_headers,
         "drop header blocks and comments"),
        ("convert-pitch", cmd_convert_pitch,
         "rewrite italiano pitch names to nederlands"),
    ):
        p = sub.add_parser(name, parents=[common], help=what)
        p.add_argument("path", help=".ly file or directory")
        p.add_argument("--out", help="output file (single input only)")
        p.add_argument("--out-dir", dest="out_dir")
        p.set_defaults(func=func)

    p = sub.add_parser(
        "tokenize", parents=[common, vocab],
        help="encode sources to token ids (JSONL)",
    )
    p.add_argument("path", help=".ly file or directory")
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser(
        "chunk", parents=[common, vocab],
        help="split encoded sources into fixed-size model inputs (JSONL)",
    )
    p.add_argument("path", help=".ly file or directory")
    p.add_argument("--size", type=int, help="chunk size (default 512)")
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=cmd_chunk)

    p = sub.add_parser(
        "mask", parents=[common, vocab, seeded],
        help="sample masked-token training examples from chunk rows",
    )
    p.add_argument("chunks", help="JSONL produced by the chunk command")
    p.add_argument("--rate", type=float, help="mask rate (default 0.15)")
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser(
        "metadata", parents=[common],
        help="extract per-file manifests (JSON)",
    )
    p.add_argument("path", help=".ly file or directory")
    p.add_argument("--forms", help="custom form list file")
    p.add_argument("--years", help="file_id -> year JSON sidecar")
    p.add_argument("--section-pattern", dest="section_pattern")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_metadata)

    p = sub.add_parser(
        "stats", parents=[common],
        help="aggregate manifests into corpus tables (CSV + JSON)",
    )
    p.add_argument("manifest_dir", help="directory of manifest .json files")
    p.add_argument("--forms", help="custom form list file")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser(
        "validate", parents=[common],
        help="compare parsed note counts against engraved output",
    )
    p.add_argument("corpus_dir", help="directory of .ly files")
    p.add_argument("--engraver", help="engraver binary name or path")
    p.add_argument("--incipit-pattern", dest="incipit_pattern")
    p.add_argument("--timeout", type=float)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser(
        "embed-baseline", parents=[common, vocab, seeded],
        help="random-projection chunk embeddings (JSONL)",
    )
    p.add_argument("path", help=".ly file or directory")
    p.add_argument("--dim", type=int, help="embedding width (default 64)")
    p.add_argument("--layers", help="comma list, e.g. 3,6,9,12")
    p.add_argument("--chunk-size", dest="chunk_size", type=int)
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=cmd_embed_baseline)

    p = sub.add_parser(
        "probe", parents=[common, seeded],
        help="cross-validated linear probes over frozen embeddings",
    )
    p.add_argument("embeddings", help="embedding JSONL file")
    p.add_argument("labels", help="labels CSV (file_id,task,label)")
    p.add_argument("--layers", help="comma list, e.g. 3,6,9,12")
    p.add_argument("--k", type=int, help="fold count (default 5)")
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--model-tag", dest="model_tag")
    p.add_argument("--epochs", type=int)
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--l2", dest="l2_penalty", type=float)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--stem", default="probe_report")
    p.add_argument(
        "--no-figure", dest="no_figure", action="store_true",
        help="skip the layer-accuracy plot",
    )
    p.set_defaults(func=cmd_probe)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ExternalToolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except LilyCorpusError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
