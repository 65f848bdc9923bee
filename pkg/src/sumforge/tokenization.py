"""WordPiece tokenization and model-ready example encoding.

Input encoding follows the per-sentence scheme: every sentence is wrapped as
[CLS] tokens... [SEP], sentences alternate segment ids 0/1, and the
extractive head reads one score per [CLS] position. Targets are BOS-prefixed
and EOS-terminated, with the decoder sequence tokens reusing the [unused0] /
[unused1] vocabulary slots.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    CorruptShard,
    DuplicateToken,
    IdOutOfRange,
    MissingSpecial,
    TooLong,
)
from .ingest import StoryDoc
from .rouge import rouge_n, rouge_tokenize

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
MASK_TOKEN = "[MASK]"
BOS_TOKEN = "[unused0]"  # target begin-of-sequence
EOS_TOKEN = "[unused1]"  # target end-of-sequence

_REQUIRED_SPECIALS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN, MASK_TOKEN)


class Vocab:
    """Token table where the id of a token is its line index."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self.ids: dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.ids:
                raise DuplicateToken(f"token {tok!r} appears more than once")
            self.ids[tok] = i
        for name in _REQUIRED_SPECIALS:
            if name not in self.ids:
                raise MissingSpecial(name)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.ids

    def id(self, token: str) -> int:
        return self.ids[token]

    @property
    def pad_id(self) -> int:
        return self.ids[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self.ids[UNK_TOKEN]

    @property
    def cls_id(self) -> int:
        return self.ids[CLS_TOKEN]

    @property
    def sep_id(self) -> int:
        return self.ids[SEP_TOKEN]

    @property
    def mask_id(self) -> int:
        return self.ids[MASK_TOKEN]

    @property
    def bos_id(self) -> int:
        if BOS_TOKEN not in self.ids:
            raise MissingSpecial(BOS_TOKEN)
        return self.ids[BOS_TOKEN]

    @property
    def eos_id(self) -> int:
        if EOS_TOKEN not in self.ids:
            raise MissingSpecial(EOS_TOKEN)
        return self.ids[EOS_TOKEN]

    def special_ids(self) -> set[int]:
        ids = {self.ids[t] for t in _REQUIRED_SPECIALS}
        for t in (BOS_TOKEN, EOS_TOKEN):
            if t in self.ids:
                ids.add(self.ids[t])
        return ids


def load_vocab(path: Path | str) -> Vocab:
    """Read a one-token-per-line UTF-8 vocabulary file."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    # A trailing blank line is file formatting, not an empty token.
    if lines and lines[-1] == "":
        lines = lines[:-1]
    return Vocab([line.rstrip("\n") for line in lines])


def basic_tokenize(text: str) -> list[str]:
    """Split on whitespace and isolate every punctuation character.

    No case folding and no diacritic stripping; Arabic text passes through
    untouched apart from the splits.
    """
    tokens: list[str] = []
    run: list[str] = []
    for ch in text:
        if ch.isspace():
            if run:
                tokens.append("".join(run))
                run = []
        elif unicodedata.category(ch).startswith("P"):
            if run:
                tokens.append("".join(run))
                run = []
            tokens.append(ch)
        else:
            run.append(ch)
    if run:
        tokens.append("".join(run))
    return tokens


def wordpiece(word: str, vocab: Vocab, max_word_chars: int = 200) -> list[str]:
    """Greedy longest-match-first subword split with ## continuations.

    A word that cannot be fully matched (or is longer than max_word_chars)
    becomes a single [UNK].
    """
    if len(word) > max_word_chars:
        return [UNK_TOKEN]
    pieces: list[str] = []
    start = 0
    while start < len(word):
        end = len(word)
        found = None
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = "##" + piece
            if piece in vocab:
                found = piece
                break
            end -= 1
        if found is None:
            return [UNK_TOKEN]
        pieces.append(found)
        start = end
    return pieces


@dataclass
class TokenizedExample:
    """Model-ready record for one document."""

    src_ids: list[int]
    segment_ids: list[int]
    cls_positions: list[int]
    ext_labels: list[int]
    tgt_ids: list[int]
    src_txt: list[str]
    tgt_txt: list[str]


def _sentence_pieces(sentence: str, vocab: Vocab) -> list[str]:
    pieces: list[str] = []
    for word in basic_tokenize(sentence):
        pieces.extend(wordpiece(word, vocab))
    return pieces


def encode_source(
    sentences: Sequence[str], vocab: Vocab, max_positions: int
) -> tuple[list[int], list[int], list[int], list[str]]:
    """Encode article sentences as [CLS] w.. [SEP] blocks with interval segments.

    Truncates at a sentence boundary: a sentence that does not fully fit
    within max_positions is dropped together with everything after it.
    Returns (src_ids, segment_ids, cls_positions, kept_sentences).
    """
    src_ids: list[int] = []
    segment_ids: list[int] = []
    cls_positions: list[int] = []
    kept: list[str] = []
    for i, sentence in enumerate(sentences):
        sentence = unicodedata.normalize("NFC", sentence)
        piece_ids = [vocab.ids.get(p, vocab.unk_id) for p in _sentence_pieces(sentence, vocab)]
        block = [vocab.cls_id] + piece_ids + [vocab.sep_id]
        if len(src_ids) + len(block) > max_positions:
            if i == 0:
                raise TooLong(
                    f"first sentence needs {len(block)} positions, limit {max_positions}"
                )
            break
        cls_positions.append(len(src_ids))
        src_ids.extend(block)
        segment_ids.extend([i % 2] * len(block))
        kept.append(sentence)
    return src_ids, segment_ids, cls_positions, kept


def encode_example(
    doc: StoryDoc,
    vocab: Vocab,
    max_positions: int,
    max_tgt_len: int,
    max_select: int = 3,
) -> TokenizedExample:
    """Turn a StoryDoc into a TokenizedExample with oracle extractive labels."""
    article = [unicodedata.normalize("NFC", s) for s in doc.article_sentences]
    src_ids, segment_ids, cls_positions, kept = encode_source(
        article, vocab, max_positions
    )

    summary = [unicodedata.normalize("NFC", s) for s in doc.summary_sentences]
    labels = oracle_labels(article, summary, max_select)[: len(kept)]

    tgt_ids = [vocab.bos_id]
    for sentence in summary:
        tgt_ids.extend(vocab.ids.get(p, vocab.unk_id) for p in _sentence_pieces(sentence, vocab))
    tgt_ids = tgt_ids[: max_tgt_len - 1]
    tgt_ids.append(vocab.eos_id)

    return TokenizedExample(
        src_ids=src_ids,
        segment_ids=segment_ids,
        cls_positions=cls_positions,
        ext_labels=labels,
        tgt_ids=tgt_ids,
        src_txt=kept,
        tgt_txt=summary,
    )


def oracle_labels(
    article_sentences: Sequence[str],
    summary_sentences: Sequence[str],
    max_select: int = 3,
) -> list[int]:
    """Greedy extractive oracle.

    Repeatedly add the sentence that most improves ROUGE-1 F1 + ROUGE-2 F1 of
    the selected set against the joined summary; stop when nothing strictly
    improves the score or max_select is reached. Ties go to the lower index.
    """
    ref_tokens = rouge_tokenize(" ".join(summary_sentences))
    sent_tokens = [rouge_tokenize(s) for s in article_sentences]

    selected: list[int] = []
    best_score = 0.0
    while len(selected) < max_select:
        best_idx = -1
        for i in range(len(article_sentences)):
            if i in selected:
                continue
            cand: list[str] = []
            for j in sorted(selected + [i]):
                cand.extend(sent_tokens[j])
            score = rouge_n(cand, ref_tokens, 1).f1 + rouge_n(cand, ref_tokens, 2).f1
            if score > best_score:
                best_score = score
                best_idx = i
        if best_idx < 0:
            break
        selected.append(best_idx)

    return [1 if i in selected else 0 for i in range(len(article_sentences))]


_SHARD_RE = re.compile(r"^shard_(\d+)\.jsonl$")
_SHARD_KEYS = ("src", "segs", "clss", "labels", "tgt", "src_txt", "tgt_txt")


def write_shards(
    examples: Iterable[TokenizedExample],
    out_dir: Path | str,
    shard_size: int = 2000,
) -> int:
    """Write examples to shard_<k>.jsonl files of shard_size lines each.

    Order-preserving; the last shard may be short. Returns the shard count.
    """
    if shard_size < 1:
        raise ValueError(f"shard_size must be >= 1, got {shard_size}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    shard_count = 0
    fh = None
    lines_in_shard = 0
    try:
        for ex in examples:
            if fh is None or lines_in_shard == shard_size:
                if fh is not None:
                    fh.close()
                fh = open(out_dir / f"shard_{shard_count}.jsonl", "w", encoding="utf-8")
                shard_count += 1
                lines_in_shard = 0
            record = {
                "src": ex.src_ids,
                "segs": ex.segment_ids,
                "clss": ex.cls_positions,
                "labels": ex.ext_labels,
                "tgt": ex.tgt_ids,
                "src_txt": ex.src_txt,
                "tgt_txt": ex.tgt_txt,
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            lines_in_shard += 1
    finally:
        if fh is not None:
            fh.close()
    return shard_count


def read_shards(shard_dir: Path | str) -> list[TokenizedExample]:
    """Read back every shard in numeric order; exact inverse of write_shards."""
    shard_dir = Path(shard_dir)
    paths = []
    for path in shard_dir.iterdir():
        m = _SHARD_RE.match(path.name)
        if m:
            paths.append((int(m.group(1)), path))
    examples: list[TokenizedExample] = []
    for _, path in sorted(paths):
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorruptShard(str(path), line_no, str(exc)) from exc
                if not all(k in record for k in _SHARD_KEYS):
                    missing = [k for k in _SHARD_KEYS if k not in record]
                    raise CorruptShard(str(path), line_no, f"missing keys {missing}")
                examples.append(
                    TokenizedExample(
                        src_ids=record["src"],
                        segment_ids=record["segs"],
                        cls_positions=record["clss"],
                        ext_labels=record["labels"],
                        tgt_ids=record["tgt"],
                        src_txt=record["src_txt"],
                        tgt_txt=record["tgt_txt"],
                    )
                )
    return examples


def decode_ids(ids: Sequence[int], vocab: Vocab) -> str:
    """Render token ids as text: specials dropped, ## continuations joined."""
    specials = vocab.special_ids()
    words: list[str] = []
    for i in ids:
        if not 0 <= i < len(vocab):
            raise IdOutOfRange(f"id {i} outside vocabulary of size {len(vocab)}")
        if i in specials:
            continue
        token = vocab.tokens[i]
        if token.startswith("##") and words:
            words[-1] += token[2:]
        else:
            words.append(token[2:] if token.startswith("##") else token)
    return " ".join(words)
