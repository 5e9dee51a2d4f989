"""Release gate.

One check per shipped guarantee, each enforcing its stated runtime
bound. Run with -v to get a single pass/fail line per guarantee. The
engraver check is integration-only and skips when no engraver binary is
installed.
"""

import json
import os
import random
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from lilycorpus.cli import main
from lilycorpus.metadata import bin_period
from lilycorpus.probe import (
    apply_standardizer,
    evaluate,
    fit_standardizer,
    probe_loss_and_grad,
    stratified_folds,
    train_linear_probe,
)
from lilycorpus.synthgen import (
    generate_corpus,
    generate_project_corpus,
    render_fake_ps,
)
from lilycorpus.taxonomy import (
    TempoMark,
    build_taxonomy,
    classify_section_name,
    quarter_bpm,
)
from lilycorpus.tokenizer import (
    EXPECTED_ADDED_TOTAL,
    IGNORE_LABEL,
    Chunk,
    TokenizedDoc,
    bytes_to_unicode,
    chunk,
    default_added_tokens_path,
    detokenize,
    load_vocabulary,
    sample_mlm_masks,
    sample_vocab_paths,
    tokenize,
)
from lilycorpus.validate import (
    batch_validate,
    count_note_events,
    count_ps_noteheads,
)

from oracles import ref_count_notes, ref_count_ps_noteheads

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="module")
def vocab():
    return load_vocabulary(*sample_vocab_paths())


# ---------------------------------------------------------------------------
# tokenizer
# ---------------------------------------------------------------------------

def test_added_tokens_are_atomic_with_boundary_guard(vocab):
    start = time.monotonic()
    assert len(vocab.added_tokens) == EXPECTED_ADDED_TOTAL == 115
    for tok in vocab.added_tokens:
        doc = tokenize(tok, vocab)
        assert doc.ids == [vocab.added_ids[tok]], tok
    doc = tokenize("\\times 2/3 { c8 d e }", vocab)
    assert vocab.added_ids["\\times"] in doc.ids
    assert vocab.added_ids["\\time"] not in doc.ids
    assert time.monotonic() - start < 1.0


def test_round_trip_identity_on_fuzzed_and_fixture_text(vocab):
    start = time.monotonic()
    rng = random.Random(271828)
    pool = [
        "\\relative", "\\time", "\\times", "\\score", "\\repeat", "unfold",
        "c'", "des,", "4", "8.", " ", "\n", "\t", "{", "}", "<<", ">>",
        "<", ">", "%", "%{", "%}", '"', "é", "♩", "\\", "#(", ")", "r",
        "s", "~", "|", "Staff", "=", "2/3", "-.", "^\"up\"", "_3",
    ]
    failures = 0
    for _ in range(1000):
        text = "".join(
            rng.choice(pool) for _ in range(rng.randrange(0, 48))
        )
        if detokenize(tokenize(text, vocab).ids, vocab) != text:
            failures += 1
    for path in sorted(FIXTURES.rglob("*.ly")):
        text = path.read_text(encoding="utf-8")
        if detokenize(tokenize(text, vocab).ids, vocab) != text:
            failures += 1
    assert failures == 0
    assert time.monotonic() - start < 30.0


def test_extended_vocabulary_size_arithmetic(tmp_path):
    base_target = 50_265
    symbols = ["<s>", "<pad>", "</s>", "<unk>", "<mask>"]
    symbols += list(bytes_to_unicode().values())
    symbols += [f"fill{i:05d}" for i in range(base_target - len(symbols))]
    assert len(symbols) == base_target
    vocab_file = tmp_path / "base.tsv"
    vocab_file.write_text(
        "".join(f"{tok}\t{i}\n" for i, tok in enumerate(symbols)),
        encoding="utf-8",
    )
    merges_file = tmp_path / "merges.txt"
    merges_file.write_text("#version: 0.2\n", encoding="utf-8")
    vocab = load_vocabulary(
        vocab_file, merges_file, default_added_tokens_path()
    )
    assert vocab.base_size == base_target
    assert vocab.size == base_target + 115 == 50_380


def test_chunks_tile_documents_of_any_length(vocab):
    start = time.monotonic()
    rng = random.Random(161803)
    lengths = [0, 1, 2, 509, 510, 511, 512, 1020, 1021, 4999, 5000]
    lengths += [rng.randrange(0, 5001) for _ in range(30)]
    for n in lengths:
        ids = [rng.randrange(0, vocab.base_size) for _ in range(n)]
        doc = TokenizedDoc(ids, [])
        pieces = chunk(doc, vocab)
        interior = []
        for i, piece in enumerate(pieces):
            assert len(piece.ids) <= 512
            if i < len(pieces) - 1:
                assert len(piece.ids) == 512
            assert piece.ids[0] == vocab.cls_id
            assert piece.ids[-1] == vocab.sep_id
            assert piece.content_len == len(piece.ids) - 2
            interior.extend(piece.ids[1:-1])
        assert interior == ids, n
    assert time.monotonic() - start < 10.0


def test_mask_counts_stable_over_hundred_seeds(vocab):
    rng = random.Random(314159)
    content = [rng.randrange(0, vocab.base_size) for _ in range(100)]
    piece = Chunk([vocab.cls_id, *content, vocab.sep_id], content_len=100)
    for seed in range(100):
        ex = sample_mlm_masks(piece, vocab, rate=0.15, seed=seed)
        assert len(ex.masked_positions) == 15
        assert all(1 <= p <= 100 for p in ex.masked_positions)
        assert ex.labels[0] == IGNORE_LABEL
        assert ex.labels[101] == IGNORE_LABEL
        n_mask = n_keep = n_rand = 0
        for pos in ex.masked_positions:
            if ex.input_ids[pos] == vocab.mask_id:
                n_mask += 1
            elif ex.input_ids[pos] == piece.ids[pos]:
                n_keep += 1
            else:
                n_rand += 1
        # targets 12 / 1.5 / 1.5 of 15 selections
        assert abs(n_mask - 12) <= 1, seed
        assert abs(n_rand - 1.5) <= 1, seed
        assert abs(n_keep - 1.5) <= 1, seed


# ---------------------------------------------------------------------------
# note counting
# ---------------------------------------------------------------------------

def test_parsed_counts_match_brute_force_on_generated_scores(tmp_path):
    start = time.monotonic()
    truth = generate_corpus(
        tmp_path / "corpus", n_files=210, seed=424209, sidecars=False
    )
    assert len(truth) >= 200
    disagreements = 0
    for path in sorted((tmp_path / "corpus").glob("*.ly")):
        source = path.read_text(encoding="utf-8")
        total, exclusions = count_note_events(source)
        ref_total, ref_excl = ref_count_notes(source)
        expected = truth[path.stem]
        ok = (
            total == ref_total == expected.total
            and exclusions.unused_variable_notes
            == ref_excl["unused_variable_notes"]
            == expected.unused_variable_notes
            and exclusions.incipit_notes
            == ref_excl["incipit_notes"]
            == expected.incipit_notes
        )
        disagreements += 0 if ok else 1
    assert disagreements == 0
    assert time.monotonic() - start < 60.0


def test_glyph_counter_agrees_with_independent_scan():
    rng = random.Random(5551212)
    texts = [render_fake_ps(rng, rng.randrange(0, 400)) for _ in range(46)]
    texts += [
        "",
        "/noteheads.",                      # nothing follows the dot
        "/noteheads.s0/noteheads.s1 draw",  # adjacent hits
        "%!PS stroke /noteheads (bare) /rests.2",
    ]
    assert len(texts) == 50
    for text in texts:
        assert count_ps_noteheads(text) == ref_count_ps_noteheads(text)


# ---------------------------------------------------------------------------
# taxonomy and period bins
# ---------------------------------------------------------------------------

def test_dance_taxonomy_and_tempo_normalization():
    dag = build_taxonomy()
    memberships = classify_section_name("giga", dag)
    assert {"suite", "fast"} <= memberships
    assert quarter_bpm(TempoMark(unit=2, bpm=60)) == 120
    assert quarter_bpm(TempoMark(unit=8, bpm=80, dots=1)) == 60


def test_period_bins_at_decision_boundaries():
    assert bin_period(1649) == "EarlyBaroque"
    assert bin_period(1650) == "HighBaroque"
    assert bin_period(1700) == "LateBaroque"
    assert bin_period(1751) == "TransitionalClassical"


# ---------------------------------------------------------------------------
# probe mathematics and hygiene
# ---------------------------------------------------------------------------

def _blobs(rng, centers, per_class, spread=0.2):
    X = np.vstack([
        rng.normal(cx, spread, size=(per_class, 2)) + np.array([0.0, cy])
        for cx, cy in centers
    ])
    y = np.repeat(np.arange(len(centers)), per_class)
    return X, y


def _cv_accuracy(X, y, k=5, seed=3):
    folds = stratified_folds(y, k=k, seed=seed)
    accs = []
    for fold in range(k):
        train = folds != fold
        test = folds == fold
        params = fit_standardizer(X[train])
        probe = train_linear_probe(
            apply_standardizer(X[train], params), y[train]
        )
        metrics = evaluate(
            probe, apply_standardizer(X[test], params), y[test]
        )
        accs.append(metrics["accuracy"])
    return float(np.mean(accs))


def test_probe_gradients_cv_balance_and_leakage():
    start = time.monotonic()

    # analytic gradient vs central differences
    rng = np.random.default_rng(13)
    X = rng.normal(size=(5, 4))
    y = np.array([0, 1, 2, 1, 0])
    W = rng.normal(size=(3, 4)) * 0.5
    b = rng.normal(size=3) * 0.5
    loss, gW, gb = probe_loss_and_grad(W, b, X, y, 1e-4)
    h = 1e-6
    num_W = np.zeros_like(W)
    for idx in np.ndindex(*W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += h
        Wm[idx] -= h
        num_W[idx] = (
            probe_loss_and_grad(Wp, b, X, y, 1e-4)[0]
            - probe_loss_and_grad(Wm, b, X, y, 1e-4)[0]
        ) / (2 * h)
    num_b = np.zeros_like(b)
    for i in range(len(b)):
        bp, bm = b.copy(), b.copy()
        bp[i] += h
        bm[i] -= h
        num_b[i] = (
            probe_loss_and_grad(W, bp, X, y, 1e-4)[0]
            - probe_loss_and_grad(W, bm, X, y, 1e-4)[0]
        ) / (2 * h)
    rel_W = np.linalg.norm(num_W - gW) / max(
        np.linalg.norm(num_W) + np.linalg.norm(gW), 1e-12
    )
    rel_b = np.linalg.norm(num_b - gb) / max(
        np.linalg.norm(num_b) + np.linalg.norm(gb), 1e-12
    )
    assert rel_W < 1e-4
    assert rel_b < 1e-4

    # separable three-class data scores a perfect cross-validated run
    rng = np.random.default_rng(7)
    X, y = _blobs(rng, [(0.0, 0.0), (6.0, 6.0), (-6.0, 6.0)], per_class=15)
    assert _cv_accuracy(X, y) == 1.0

    # shuffled labels land near chance
    rng = np.random.default_rng(515)
    X = rng.normal(size=(60, 4))
    y = rng.permutation(np.array([0] * 20 + [1] * 20 + [2] * 20))
    assert abs(_cv_accuracy(X, y) - 1 / 3) <= 0.1

    # per-class fold sizes differ by at most one
    folds = stratified_folds(y, k=5, seed=11)
    for cls in np.unique(y):
        sizes = [
            int(np.sum((folds == f) & (y == cls))) for f in range(5)
        ]
        assert max(sizes) - min(sizes) <= 1

    # mutating held-out rows must not move fitted parameters
    rng = np.random.default_rng(303)
    X, y = _blobs(rng, [(0.0, 0.0), (3.0, 3.0)], per_class=25)
    folds = stratified_folds(y, k=5, seed=1)
    train = folds != 0
    test = folds == 0
    params = fit_standardizer(X[train])
    probe = train_linear_probe(
        apply_standardizer(X[train], params), y[train]
    )
    X_mut = X.copy()
    X_mut[test] = rng.normal(size=X_mut[test].shape) * 100
    params2 = fit_standardizer(X_mut[train])
    probe2 = train_linear_probe(
        apply_standardizer(X_mut[train], params2), y[train]
    )
    assert np.array_equal(params.mean, params2.mean)
    assert np.array_equal(probe.W, probe2.W)
    assert np.array_equal(probe.b, probe2.b)

    assert time.monotonic() - start < 60.0


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------

def _run_pipeline(projects: Path, labels: Path, work: Path) -> Path:
    flat = work / "flat"
    flat.mkdir(parents=True)
    for proj in sorted(p for p in projects.iterdir() if p.is_dir()):
        rc = main([
            "flatten", str(proj), "--out", str(flat / (proj.name + ".ly")),
        ])
        assert rc == 0
    conv = work / "converted"
    assert main(["convert-pitch", str(flat), "--out-dir", str(conv)]) == 0
    bare = work / "bare"
    assert main(["strip-headers", str(conv), "--out-dir", str(bare)]) == 0
    tokens = work / "tokens.jsonl"
    assert main(["tokenize", str(bare), "--out", str(tokens)]) == 0
    chunks = work / "chunks.jsonl"
    assert main(["chunk", str(bare), "--out", str(chunks)]) == 0
    emb = work / "embeddings.jsonl"
    assert main([
        "embed-baseline", str(bare), "--dim", "32", "--out", str(emb),
    ]) == 0
    report_dir = work / "report"
    rc = main([
        "probe", str(emb), str(labels), "--out-dir", str(report_dir),
    ])
    assert rc == 0
    return report_dir


def test_pipeline_smoke_report_complete_and_deterministic(tmp_path):
    start = time.monotonic()
    projects = tmp_path / "projects"
    generate_project_corpus(
        projects, n_projects=60, seed=60601, italiano_share=0.5
    )
    labels = projects / "labels.csv"

    first = _run_pipeline(projects, labels, tmp_path / "run1")
    second = _run_pipeline(projects, labels, tmp_path / "run2")

    csv_lines = (first / "probe_report.csv").read_text(
        encoding="utf-8"
    ).splitlines()
    assert csv_lines[0] == (
        "task,layer,model,n_samples,n_classes,acc_mean,acc_std,"
        "precision_mean,precision_std,recall_mean,recall_std"
    )
    assert len(csv_lines) == 1 + 4  # one task, four layers
    for line in csv_lines[1:]:
        cells = line.split(",")
        assert len(cells) == 11
        assert all(cell != "" for cell in cells)
        assert cells[3] == "60"
        assert cells[4] == "3"
    payload = json.loads(
        (first / "probe_report.json").read_text(encoding="utf-8")
    )
    assert len(payload["rows"]) == 4
    assert payload["confusion"]

    for name in ("probe_report.csv", "probe_report.json",
                 "probe_report_layers.png"):
        assert (first / name).read_bytes() == (second / name).read_bytes()

    assert time.monotonic() - start < 300.0


# ---------------------------------------------------------------------------
# optional engraver integration
# ---------------------------------------------------------------------------

def _real_engraver() -> str | None:
    override = os.environ.get("LILYCORPUS_ENGRAVER")
    if override:
        return shutil.which(override)
    return shutil.which("lilypond")


@pytest.mark.skipif(_real_engraver() is None,
                    reason="no engraver binary installed")
def test_engraved_counts_match_on_handwritten_pieces(tmp_path):
    pieces = {
        "steps": "\\score { { c'4 d' e' f' } }\n",
        "chordrest": "\\score { { <c' e' g'>2 r4 g'4 } }\n",
        "unfolded": "\\score { { \\repeat unfold 2 { c'4 d' } } }\n",
    }
    for name, body in pieces.items():
        (tmp_path / f"{name}.ly").write_text(
            '\\version "2.24.0"\n' + body, encoding="utf-8"
        )
    summary, reports = batch_validate(tmp_path, engraver=_real_engraver())
    assert summary.n_compared == 3
    assert summary.perfect_ratio == 1.0
