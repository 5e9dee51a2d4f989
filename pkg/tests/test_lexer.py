import random

import pytest

from lilycorpus.lexer import (
    StructuralToken,
    TokenKind,
    UnterminatedBlockComment,
    UnterminatedString,
    lex,
    reconstruct,
)
from oracles import ref_lex


def kinds(tokens):
    return [t.kind for t in tokens]


def texts(tokens):
    return [t.text for t in tokens]


def test_empty_input():
    assert lex("") == []


def test_whitespace_only():
    assert lex("  \n\t  ") == []


def test_relative_block():
    toks = lex(r"\relative { c'4 }")
    assert kinds(toks) == [
        TokenKind.COMMAND,
        TokenKind.OPEN_BRACE,
        TokenKind.WORD,
        TokenKind.NUMBER,
        TokenKind.CLOSE_BRACE,
    ]
    assert texts(toks) == ["\\relative", "{", "c'", "4", "}"]


def test_line_comment_then_note():
    toks = lex("% hi\nc4")
    assert kinds(toks) == [TokenKind.COMMENT, TokenKind.WORD, TokenKind.NUMBER]
    assert toks[0].text == "% hi"


def test_block_comment():
    toks = lex("a %{ two\nlines %} b")
    assert texts(toks) == ["a", "%{ two\nlines %}", "b"]
    assert toks[1].kind is TokenKind.COMMENT


def test_string_with_escape():
    toks = lex(r'"say \"hi\"" c')
    assert kinds(toks) == [TokenKind.STRING, TokenKind.WORD]
    assert toks[0].text == r'"say \"hi\""'


def test_unterminated_string():
    with pytest.raises(UnterminatedString) as exc:
        lex('x = "oops')
    assert exc.value.byte_offset == 4


def test_unterminated_block_comment():
    with pytest.raises(UnterminatedBlockComment) as exc:
        lex("c4 %{ never closed")
    assert exc.value.byte_offset == 3


def test_word_stops_at_digit():
    toks = lex("c'4 d,,8. r2")
    assert texts(toks) == ["c'", "4", "d,,", "8.", "r", "2"]
    assert kinds(toks) == [
        TokenKind.WORD, TokenKind.NUMBER,
        TokenKind.WORD, TokenKind.NUMBER,
        TokenKind.WORD, TokenKind.NUMBER,
    ]


def test_angles_and_double_angles():
    toks = lex("<< <c e g>1 >>")
    assert kinds(toks) == [
        TokenKind.DOUBLE_ANGLE_OPEN,
        TokenKind.OPEN_ANGLE,
        TokenKind.WORD, TokenKind.WORD, TokenKind.WORD,
        TokenKind.CLOSE_ANGLE,
        TokenKind.NUMBER,
        TokenKind.DOUBLE_ANGLE_CLOSE,
    ]


def test_articulation_shorthand_not_close_angle():
    # c4-> is an accent, not a chord close
    toks = lex("c4-> d4-. e4^-")
    assert TokenKind.CLOSE_ANGLE not in kinds(toks)
    assert texts(toks) == ["c", "4", "->", "d", "4", "-.", "e", "4", "^-"]


def test_hairpins_are_not_angles():
    toks = lex(r"c4\< d4\> e4\!")
    assert TokenKind.OPEN_ANGLE not in kinds(toks)
    assert TokenKind.CLOSE_ANGLE not in kinds(toks)
    assert [t.text for t in toks if t.kind is TokenKind.OTHER] == [
        "\\<", "\\>", "\\!",
    ]


def test_voice_separator():
    toks = lex(r"{ c4 \\ d4 }")
    others = [t for t in toks if t.kind is TokenKind.OTHER]
    assert len(others) == 1 and others[0].text == "\\\\"


def test_scheme_paren_datum_is_opaque():
    toks = lex("#(set-global-staff-size 20) c4")
    assert toks[0].kind is TokenKind.OTHER
    assert toks[0].text == "#(set-global-staff-size 20)"
    assert texts(toks)[1:] == ["c", "4"]


def test_scheme_boolean_and_simple():
    toks = lex("##t #red #42")
    assert kinds(toks) == [TokenKind.OTHER] * 3
    assert texts(toks) == ["##t", "#red", "#42"]


def test_scheme_nested_parens_and_string():
    src = '#(foo (bar ")unbalanced(") baz)'
    toks = lex(src)
    assert len(toks) == 1 and toks[0].text == src


def test_equals_token():
    toks = lex('title = "x"')
    assert kinds(toks) == [TokenKind.WORD, TokenKind.EQUALS, TokenKind.STRING]


def test_command_token():
    toks = lex(r"\time 3/4")
    assert toks[0].kind is TokenKind.COMMAND and toks[0].text == "\\time"
    # 3/4 lexes as number, other, number
    assert [t.kind for t in toks[1:]] == [
        TokenKind.NUMBER, TokenKind.OTHER, TokenKind.NUMBER,
    ]


def test_spans_cover_text():
    src = r"\relative { c'4 d8. }"
    for tok in lex(src):
        a, b = tok.char_span
        assert src[a:b] == tok.text


def test_byte_spans_ascii_match_char_spans():
    src = "c4 d4"
    for tok in lex(src):
        assert tok.char_span == tok.byte_span


def test_byte_spans_non_ascii():
    src = 'title = "Prélude" c4'
    toks = lex(src)
    string_tok = [t for t in toks if t.kind is TokenKind.STRING][0]
    a, b = string_tok.byte_span
    assert src.encode("utf-8")[a:b].decode("utf-8") == string_tok.text
    word = [t for t in toks if t.text == "c"][0]
    a, b = word.byte_span
    assert src.encode("utf-8")[a:b].decode("utf-8") == "c"


def test_lossless_reconstruction_examples():
    samples = [
        r"\relative c' { c4 d e f | g1 }",
        "music = { <c e>2. r4 }\n\\score { \\music }",
        '%{ x %} \\header { title = "T" } % end',
        "#(define x 1) { c4\\< d\\! }",
    ]
    for src in samples:
        assert reconstruct(src, lex(src)) == src


def test_lossless_reconstruction_fuzz():
    rng = random.Random(20259)
    alphabet = list("abcdefg',1248 {}<>=%\\#\"\n rRs~|.-^_")
    for _ in range(300):
        n = rng.randrange(0, 60)
        src = "".join(rng.choice(alphabet) for _ in range(n))
        try:
            toks = lex(src)
        except (UnterminatedString, UnterminatedBlockComment):
            continue
        assert reconstruct(src, toks) == src


def test_agrees_with_reference_lexer():
    rng = random.Random(77568)
    words = ["c'", "d,,", "\\relative", "\\time", "{", "}", "<<", ">>",
             "<", ">", "=", "4", "8.", "16", '"lbl"', "% c\n", "r", "s",
             "##t", "#(x (y))", "\\<", "\\!", "->", "-.", "music", "~", "|"]
    for _ in range(200):
        src = " ".join(rng.choice(words) for _ in range(rng.randrange(0, 25)))
        got = [(t.kind.value, t.text) for t in lex(src)]
        assert got == ref_lex(src)


def test_token_is_frozen():
    tok = lex("c4")[0]
    assert isinstance(tok, StructuralToken)
    with pytest.raises(AttributeError):
        tok.text = "d"
