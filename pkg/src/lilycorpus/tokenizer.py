"""Byte-level subword tokenizer extended with atomic backslash commands.

The base scheme is byte-level pair merging over a printable-byte alphabet,
so every input has a total encoding and decoding is byte-exact. On top of
that, a table of added tokens (115 engraving commands in six categories)
is matched leftmost-longest before subword segmentation, with a boundary
guard: a match is rejected when the next character is an ASCII letter, so
``\\times`` never decomposes into ``\\time`` + ``s``.

Also provides fixed-size chunking with sequence-start/end wrapping and
seeded MLM mask sampling.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import LilyCorpusError

EXPECTED_ADDED_TOTAL = 115
DEFAULT_CHUNK_SIZE = 512
DEFAULT_MASK_RATE = 0.15
IGNORE_LABEL = -100

_PRETOK = re.compile(r" ?[A-Za-z]+| ?[0-9]+| ?[^\sA-Za-z0-9]+|\s+(?!\S)|\s+")
_ASCII_LETTER_BYTES = frozenset(b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ")

_CLS_NAMES = ("<s>", "[CLS]")
_SEP_NAMES = ("</s>", "[SEP]")
_PAD_NAMES = ("<pad>", "[PAD]")
_UNK_NAMES = ("<unk>", "[UNK]")
_MASK_NAMES = ("<mask>", "[MASK]")


class InvalidVocabulary(LilyCorpusError):
    pass


class DuplicateAddedToken(LilyCorpusError):
    def __init__(self, token: str):
        super().__init__(f"added token listed twice: {token!r}")
        self.token = token


class AddedTokenCollidesWithBase(LilyCorpusError):
    def __init__(self, token: str):
        super().__init__(f"added token already in base vocabulary: {token!r}")
        self.token = token


class WrongCategoryCount(LilyCorpusError):
    def __init__(self, total: int):
        super().__init__(
            f"added-token table has {total} entries, expected "
            f"{EXPECTED_ADDED_TOTAL}"
        )
        self.total = total


class UnknownId(LilyCorpusError):
    def __init__(self, token_id: int):
        super().__init__(f"token id out of range: {token_id}")
        self.token_id = token_id


class RateOutOfRange(LilyCorpusError):
    def __init__(self, rate: float):
        super().__init__(f"mask rate must be in (0, 1), got {rate}")
        self.rate = rate


def bytes_to_unicode() -> dict[int, str]:
    """Map each byte to a printable unicode character (identity for the
    printable latin range, remapped elsewhere)."""
    bs = list(range(ord("!"), ord("~") + 1)) + \
         list(range(ord("\xa1"), ord("\xac") + 1)) + \
         list(range(ord("\xae"), ord("\xff") + 1))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, [chr(c) for c in cs]))


_B2U = bytes_to_unicode()
_U2B = {u: b for b, u in _B2U.items()}


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: list[str]
    merge_ranks: dict[tuple[str, str], int]
    added_tokens: list[str]          # file order; ids follow base range
    categories: dict[str, list[str]]
    base_size: int
    cls_id: int
    sep_id: int
    pad_id: int
    unk_id: int
    mask_id: int

    def __post_init__(self):
        self._bpe_cache: dict[bytes, tuple[str, ...]] = {}
        self.added_ids = {
            tok: self.base_size + i for i, tok in enumerate(self.added_tokens)
        }
        self.special_ids = frozenset(
            {self.cls_id, self.sep_id, self.pad_id, self.unk_id, self.mask_id}
        )
        # longest-first match order for the leftmost-longest scan
        self._added_by_len = sorted(
            ((tok.encode("ascii"), self.added_ids[tok]) for tok in self.added_tokens),
            key=lambda pair: len(pair[0]),
            reverse=True,
        )

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        """Id for a token string; accepts [CLS]/[SEP]/[MASK]/[PAD]/[UNK]
        as aliases for the base special tokens."""
        alias = {
            "[CLS]": self.cls_id, "[SEP]": self.sep_id, "[MASK]": self.mask_id,
            "[PAD]": self.pad_id, "[UNK]": self.unk_id,
        }
        if token in alias:
            return alias[token]
        if token in self.token_to_id:
            return self.token_to_id[token]
        raise LilyCorpusError(f"token not in vocabulary: {token!r}")


@dataclass(frozen=True)
class TokenizedDoc:
    ids: list[int]
    offsets: list[tuple[int, int]]   # byte spans into the source


@dataclass(frozen=True)
class Chunk:
    ids: list[int]
    content_len: int


@dataclass(frozen=True)
class MaskedExample:
    input_ids: list[int]
    labels: list[int]
    masked_positions: list[int]


def _find_special(token_to_id: dict[str, int], names: tuple[str, ...]) -> int:
    for name in names:
        if name in token_to_id:
            return token_to_id[name]
    raise InvalidVocabulary(f"special token missing (looked for {names})")


def load_vocabulary(
    vocab_file: str | Path,
    merges_file: str | Path,
    added_tokens_file: str | Path | None = None,
) -> Vocabulary:
    token_to_id: dict[str, int] = {}
    for lineno, line in enumerate(
        Path(vocab_file).read_text(encoding="utf-8").splitlines(), 1
    ):
        if not line:
            continue
        try:
            tok, id_str = line.split("\t")
            tid = int(id_str)
        except ValueError:
            raise InvalidVocabulary(
                f"{vocab_file}:{lineno}: expected token<TAB>id"
            ) from None
        if tok in token_to_id:
            raise InvalidVocabulary(f"duplicate token {tok!r} in base vocabulary")
        token_to_id[tok] = tid

    base_size = len(token_to_id)
    if sorted(token_to_id.values()) != list(range(base_size)):
        raise InvalidVocabulary("base ids are not dense in [0, base_size)")
    missing_bytes = [b for b in range(256) if _B2U[b] not in token_to_id]
    if missing_bytes:
        raise InvalidVocabulary(
            f"base vocabulary lacks {len(missing_bytes)} byte symbols"
        )

    merge_ranks: dict[tuple[str, str], int] = {}
    rank = 0
    for line in Path(merges_file).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#version"):
            continue
        parts = line.split(" ")
        if len(parts) != 2:
            raise InvalidVocabulary(f"malformed merge line: {line!r}")
        left, right = parts
        if left not in token_to_id or right not in token_to_id:
            raise InvalidVocabulary(f"merge references unknown symbol: {line!r}")
        if left + right not in token_to_id:
            raise InvalidVocabulary(f"merge result not in vocabulary: {line!r}")
        merge_ranks[(left, right)] = rank
        rank += 1

    if added_tokens_file is None:
        added_tokens_file = default_added_tokens_path()
    categories: dict[str, list[str]] = {}
    added: list[str] = []
    seen: set[str] = set()
    for lineno, line in enumerate(
        Path(added_tokens_file).read_text(encoding="utf-8").splitlines(), 1
    ):
        if not line:
            continue
        try:
            category, tok = line.split("\t")
        except ValueError:
            raise InvalidVocabulary(
                f"{added_tokens_file}:{lineno}: expected category<TAB>token"
            ) from None
        if not tok.startswith("\\"):
            raise InvalidVocabulary(
                f"added token must begin with a backslash: {tok!r}"
            )
        if tok in seen:
            raise DuplicateAddedToken(tok)
        if tok in token_to_id:
            raise AddedTokenCollidesWithBase(tok)
        seen.add(tok)
        added.append(tok)
        categories.setdefault(category, []).append(tok)
    if len(added) != EXPECTED_ADDED_TOTAL:
        raise WrongCategoryCount(len(added))

    id_to_token = [""] * base_size
    for tok, tid in token_to_id.items():
        id_to_token[tid] = tok
    full_map = dict(token_to_id)
    for i, tok in enumerate(added):
        full_map[tok] = base_size + i
        id_to_token.append(tok)

    return Vocabulary(
        token_to_id=full_map,
        id_to_token=id_to_token,
        merge_ranks=merge_ranks,
        added_tokens=added,
        categories=categories,
        base_size=base_size,
        cls_id=_find_special(token_to_id, _CLS_NAMES),
        sep_id=_find_special(token_to_id, _SEP_NAMES),
        pad_id=_find_special(token_to_id, _PAD_NAMES),
        unk_id=_find_special(token_to_id, _UNK_NAMES),
        mask_id=_find_special(token_to_id, _MASK_NAMES),
    )


def default_added_tokens_path() -> Path:
    return Path(resources.files("lilycorpus.data") / "added_tokens.tsv")


def sample_vocab_paths() -> tuple[Path, Path]:
    data = resources.files("lilycorpus.data")
    return Path(data / "mini_vocab.tsv"), Path(data / "mini_merges.txt")


def _scan_added(data: bytes, vocab: Vocabulary):
    """Yield (start, end, id) for added-token matches, leftmost-longest,
    rejecting matches followed by an ASCII letter."""
    n = len(data)
    i = data.find(b"\\")
    while i != -1:
        nxt = i + 1
        for tok_bytes, tid in vocab._added_by_len:
            if data.startswith(tok_bytes, i):
                end = i + len(tok_bytes)
                if end < n and data[end] in _ASCII_LETTER_BYTES:
                    continue
                yield i, end, tid
                nxt = end
                break
        i = data.find(b"\\", nxt)


def _bpe(piece: bytes, vocab: Vocabulary) -> tuple[str, ...]:
    cached = vocab._bpe_cache.get(piece)
    if cached is not None:
        return cached
    symbols = [_B2U[b] for b in piece]
    ranks = vocab.merge_ranks
    while len(symbols) > 1:
        best_pair = None
        best_rank = None
        for k in range(len(symbols) - 1):
            r = ranks.get((symbols[k], symbols[k + 1]))
            if r is not None and (best_rank is None or r < best_rank):
                best_rank = r
                best_pair = (symbols[k], symbols[k + 1])
        if best_pair is None:
            break
        left, right = best_pair
        out: list[str] = []
        k = 0
        while k < len(symbols):
            if (
                k + 1 < len(symbols)
                and symbols[k] == left
                and symbols[k + 1] == right
            ):
                out.append(left + right)
                k += 2
            else:
                out.append(symbols[k])
                k += 1
        symbols = out
    result = tuple(symbols)
    vocab._bpe_cache[piece] = result
    return result


def tokenize(text: str, vocab: Vocabulary) -> TokenizedDoc:
    data = text.encode("utf-8")
    ids: list[int] = []
    offsets: list[tuple[int, int]] = []

    def encode_segment(segment: bytes, base: int) -> None:
        pos = base
        for piece in _PRETOK.findall(segment.decode("utf-8")):
            for sym in _bpe(piece.encode("utf-8"), vocab):
                ids.append(vocab.token_to_id[sym])
                offsets.append((pos, pos + len(sym)))
                pos += len(sym)

    cursor = 0
    for start, end, tid in _scan_added(data, vocab):
        if start > cursor:
            encode_segment(data[cursor:start], cursor)
        ids.append(tid)
        offsets.append((start, end))
        cursor = end
    if cursor < len(data):
        encode_segment(data[cursor:], cursor)
    return TokenizedDoc(ids, offsets)


def detokenize(ids, vocab: Vocabulary) -> str:
    """Byte-exact inverse of tokenize. Special ids decode to nothing, so a
    chunked sequence decodes to its content."""
    out = bytearray()
    size = vocab.size
    for tid in ids:
        tid = int(tid)
        if tid < 0 or tid >= size:
            raise UnknownId(tid)
        if tid in vocab.special_ids:
            continue
        tok = vocab.id_to_token[tid]
        if tid >= vocab.base_size:
            out.extend(tok.encode("ascii"))
        else:
            out.extend(_U2B[ch] for ch in tok)
    return out.decode("utf-8")


def chunk(
    doc: TokenizedDoc, vocab: Vocabulary, size: int = DEFAULT_CHUNK_SIZE
) -> list[Chunk]:
    """Partition content ids into runs of (size - 2), each wrapped with the
    sequence-start and sequence-end ids. The final chunk may be shorter."""
    if size < 3:
        raise LilyCorpusError(f"chunk size must be at least 3, got {size}")
    content = doc.ids
    step = size - 2
    chunks = []
    for i in range(0, len(content), step):
        run = list(content[i:i + step])
        chunks.append(
            Chunk([vocab.cls_id, *run, vocab.sep_id], content_len=len(run))
        )
    return chunks


def sample_mlm_masks(
    chunk_in: Chunk,
    vocab: Vocabulary,
    rate: float = DEFAULT_MASK_RATE,
    seed: int = 0,
) -> MaskedExample:
    """Select round(rate x content_len) content positions without
    replacement; corrupt 80% to the mask id, 10% to a random id, leave 10%
    unchanged (counts rounded). Deterministic per (chunk, rate, seed)."""
    if not 0 < rate < 1:
        raise RateOutOfRange(rate)
    rng = np.random.default_rng(seed)
    n_content = chunk_in.content_len
    n_selected = round(rate * n_content)

    input_ids = list(chunk_in.ids)
    labels = [IGNORE_LABEL] * len(input_ids)
    if n_selected == 0:
        return MaskedExample(input_ids, labels, [])

    positions = rng.choice(np.arange(1, 1 + n_content), size=n_selected,
                           replace=False)
    shuffled = rng.permutation(positions)
    n_mask = round(0.8 * n_selected)
    n_rand = round(0.1 * n_selected)
    n_mask = min(n_mask, n_selected)
    n_rand = min(n_rand, n_selected - n_mask)

    for pos in positions:
        labels[int(pos)] = chunk_in.ids[int(pos)]
    for pos in shuffled[:n_mask]:
        input_ids[int(pos)] = vocab.mask_id
    for pos in shuffled[n_mask:n_mask + n_rand]:
        input_ids[int(pos)] = int(rng.integers(0, vocab.size))
    # remaining selected positions keep their original id

    return MaskedExample(input_ids, labels, sorted(int(p) for p in positions))
