"""OLID corpus handling: parsing, cleaning, tokenization, vocabulary, encoding.

The cleaning pipeline lowercases tweets, strips '#'/'@', collapses repeated
'@USER' mentions (keeping their count as a feature), and isolates punctuation
so every mark is its own token.
"""

import hashlib
import re
from dataclasses import dataclass
from typing import IO, Iterable, Optional

PAD_INDEX = 0
UNK_INDEX = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

USER_MENTION = "@USER"

# Class-index order per task; positions define the integer label encoding.
TASK_LABELS = {
    "a": ("NOT", "OFF"),
    "b": ("UNT", "TIN"),
    "c": ("IND", "GRP", "OTH"),
}

OLID_HEADER = ("id", "tweet", "subtask_a", "subtask_b", "subtask_c")

_PUNCT_RE = re.compile(r"([.,!?;:()\"'])")


class CorpusError(ValueError):
    """Raised for malformed input files or label inconsistencies."""


@dataclass
class TweetRecord:
    id: str
    raw_text: str
    clean_text: str
    user_count: int
    label_a: Optional[str] = None
    label_b: Optional[str] = None
    label_c: Optional[str] = None

    def label_for(self, task: str) -> Optional[str]:
        return {"a": self.label_a, "b": self.label_b, "c": self.label_c}[task]


def clean(raw_text: str) -> tuple[str, int]:
    """Clean a raw tweet; returns (clean_text, user_count).

    Steps, in order: count '@USER' occurrences, collapse runs of '@USER'
    tokens to one, lowercase, drop residual '#'/'@', put whitespace around
    each punctuation mark in .,!?;:()"' and collapse whitespace.
    """
    user_count = raw_text.count(USER_MENTION)

    kept = []
    prev_was_user = False
    for tok in raw_text.split():
        is_user = tok == USER_MENTION
        if is_user and prev_was_user:
            continue
        kept.append(tok)
        prev_was_user = is_user

    text = " ".join(kept).lower()
    text = text.replace("#", "").replace("@", "")
    text = _PUNCT_RE.sub(r" \1 ", text)
    text = " ".join(text.split())
    return text, user_count


def tokenize(clean_text: str) -> list[str]:
    """Split cleaned text on whitespace; never yields empty tokens."""
    return clean_text.split()


def _normalize_task(task: str) -> str:
    t = task.lower()
    if t not in TASK_LABELS:
        raise CorpusError(f"unknown task {task!r}; expected one of a, b, c")
    return t


def _check_hierarchy(record: TweetRecord, line_no: int) -> None:
    if record.label_b is not None and record.label_a != "OFF":
        raise CorpusError(
            f"line {line_no}: subtask_b={record.label_b} requires subtask_a=OFF "
            f"(got {record.label_a})"
        )
    if record.label_c is not None and record.label_b != "TIN":
        raise CorpusError(
            f"line {line_no}: subtask_c={record.label_c} requires subtask_b=TIN "
            f"(got {record.label_b})"
        )


def _parse_label(value: str, task: str, line_no: int) -> Optional[str]:
    if value == "NULL":
        return None
    if value not in TASK_LABELS[task]:
        raise CorpusError(f"line {line_no}: unknown subtask_{task} label {value!r}")
    return value


def parse_olid(stream: IO[str]) -> list[TweetRecord]:
    """Parse an OLID-format TSV stream into TweetRecords.

    The header must start with `id<TAB>tweet`, optionally followed by
    subtask_a / subtask_b / subtask_c columns in that order; "NULL" marks an
    absent label. Every data row must match the header's column count.
    """
    lines = iter(stream)
    try:
        header_line = next(lines)
    except StopIteration:
        raise CorpusError("empty stream: missing header row") from None

    header = tuple(h.strip().lstrip("﻿") for h in header_line.rstrip("\r\n").split("\t"))
    if header != OLID_HEADER[: len(header)] or len(header) < 2:
        raise CorpusError(
            f"unexpected header {header!r}; expected a prefix of {OLID_HEADER!r}"
        )
    n_cols = len(header)

    records = []
    for line_no, line in enumerate(lines, start=2):
        line = line.rstrip("\r\n")
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != n_cols:
            raise CorpusError(
                f"line {line_no}: expected {n_cols} tab-separated columns, got {len(fields)}"
            )
        raw = fields[1]
        clean_text, user_count = clean(raw)
        labels = {"a": None, "b": None, "c": None}
        for col, task in zip(fields[2:], "abc"):
            labels[task] = _parse_label(col, task, line_no)
        record = TweetRecord(
            id=fields[0],
            raw_text=raw,
            clean_text=clean_text,
            user_count=user_count,
            label_a=labels["a"],
            label_b=labels["b"],
            label_c=labels["c"],
        )
        _check_hierarchy(record, line_no)
        records.append(record)
    return records


def filter_task(records: Iterable[TweetRecord], task: str) -> list[TweetRecord]:
    """Keep only records labeled for `task`."""
    task = _normalize_task(task)
    return [r for r in records if r.label_for(task) is not None]


class Vocabulary:
    """Token <-> index bijection with PAD=0 and UNK=1 reserved."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.index_to_token: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self.token_to_index: dict[str, int] = {PAD_TOKEN: 0, UNK_TOKEN: 1}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self.token_to_index.get(token)
        if idx is None:
            idx = len(self.index_to_token)
            self.token_to_index[token] = idx
            self.index_to_token.append(token)
        return idx

    def __len__(self) -> int:
        return len(self.index_to_token)

    @property
    def size(self) -> int:
        return len(self.index_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_index

    def index(self, token: str) -> int:
        return self.token_to_index.get(token, UNK_INDEX)

    def content_hash(self) -> str:
        """SHA-256 over the ordered token list; identifies the vocabulary."""
        joined = "\n".join(self.index_to_token).encode("utf-8")
        return hashlib.sha256(joined).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.index_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise CorpusError(f"{path}: not a vocabulary file (missing PAD/UNK rows)")
        vocab = cls()
        for tok in tokens[2:]:
            vocab.add(tok)
        return vocab


def build_vocab(token_lists: Iterable[list[str]]) -> Vocabulary:
    """Vocabulary over distinct tokens in first-occurrence order (min freq 1)."""
    vocab = Vocabulary()
    for tokens in token_lists:
        for tok in tokens:
            vocab.add(tok)
    return vocab


def encode(tokens: list[str], vocab: Vocabulary, length: int) -> list[int]:
    """Fixed-length index sequence: front-padded, truncated keeping the tail.

    Unknown tokens map to UNK; padding uses PAD so the recurrent pass ends on
    real tokens.
    """
    if length < 1:
        raise ValueError(f"sequence length must be >= 1, got {length}")
    indices = [vocab.index(t) for t in tokens[-length:]]
    return [PAD_INDEX] * (length - len(indices)) + indices


@dataclass
class EncodedExample:
    indices: list[int]
    user_count: int
    label: int


def encode_records(
    records: Iterable[TweetRecord], vocab: Vocabulary, task: str, length: int
) -> list[EncodedExample]:
    """Encode task-labeled records into fixed-length examples."""
    task = _normalize_task(task)
    label_index = {name: i for i, name in enumerate(TASK_LABELS[task])}
    out = []
    for r in records:
        label = r.label_for(task)
        if label is None:
            raise CorpusError(f"record {r.id} has no subtask_{task} label")
        out.append(
            EncodedExample(
                indices=encode(tokenize(r.clean_text), vocab, length),
                user_count=r.user_count,
                label=label_index[label],
            )
        )
    return out


def user_count_stats(
    records: Iterable[TweetRecord], task: str
) -> dict[str, tuple[float, float]]:
    """Per-class (mean, population std) of user_count for `task`."""
    task = _normalize_task(task)
    by_class: dict[str, list[int]] = {name: [] for name in TASK_LABELS[task]}
    for r in records:
        label = r.label_for(task)
        if label is not None:
            by_class[label].append(r.user_count)
    stats = {}
    for name, counts in by_class.items():
        if not counts:
            raise CorpusError(f"no examples for class {name} in task {task}")
        n = len(counts)
        mean = sum(counts) / n
        var = sum((c - mean) ** 2 for c in counts) / n
        stats[name] = (mean, var**0.5)
    return stats


def write_clean_tsv(records: Iterable[TweetRecord], path) -> None:
    """Cleaned corpus as TSV: id, clean_text, user_count, label_a, label_b, label_c."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id\tclean_text\tuser_count\tlabel_a\tlabel_b\tlabel_c\n")
        for r in records:
            fh.write(
                "\t".join(
                    [
                        r.id,
                        r.clean_text,
                        str(r.user_count),
                        r.label_a or "NULL",
                        r.label_b or "NULL",
                        r.label_c or "NULL",
                    ]
                )
                + "\n"
            )
