"""Tables, question/table examples, and their token-sequence encoding.

Linearization follows the [CLS] question [SEP] table layout with structural
id channels (segment, column, row, within-cell rank). Two heuristic
selectors shorten long sequences: round-robin cell concatenation and
question/column overlap ranking. Both keep the question span untouched and
never reorder surviving tokens.

The tokenizer is deliberately simple (lowercase, whitespace split,
punctuation stripped) so vocabularies are built from the corpus itself.
"""

from __future__ import annotations

import csv
import json
import string
from dataclasses import dataclass
from pathlib import Path

from .errors import BudgetError, ContractError, InputTooLongError

PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
UNK_ID = 3

PAD_TOKEN = "[PAD]"
CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
UNK_TOKEN = "[UNK]"

STRUCT_ID_CAP = 255  # structural embedding tables have 256 rows

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip punctuation, drop empties."""
    out = []
    for raw in text.lower().split():
        tok = raw.translate(_PUNCT_TABLE)
        if tok:
            out.append(tok)
    return out


@dataclass(frozen=True)
class Table:
    """A header row plus a rectangular grid of cell strings."""

    header: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if len(self.header) < 1:
            raise ContractError("table needs at least one column")
        for r in self.rows:
            if len(r) != len(self.header):
                raise ContractError(
                    f"row has {len(r)} cells, expected {len(self.header)}")

    @property
    def n_cols(self) -> int:
        return len(self.header)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @staticmethod
    def make(header, rows) -> "Table":
        return Table(tuple(header), tuple(tuple(r) for r in rows))


@dataclass(frozen=True)
class Example:
    """One supervised instance: a question (or statement) about a table.

    Exactly one of ``answer_coords`` (cell-selection supervision, 0-based
    (row, col) into the body grid) and ``label`` (binary entailment) is set.
    """

    question: str
    table: Table
    answer_coords: frozenset[tuple[int, int]] | None = None
    label: int | None = None

    def __post_init__(self):
        if (self.answer_coords is None) == (self.label is None):
            raise ContractError("exactly one of answer_coords / label must be set")
        if self.answer_coords is not None:
            for r, c in self.answer_coords:
                if not (0 <= r < self.table.n_rows and 0 <= c < self.table.n_cols):
                    raise ContractError(f"answer cell {(r, c)} outside table extent")
        if self.label is not None and self.label not in (0, 1):
            raise ContractError("label must be 0 or 1")


class Vocabulary:
    """Injective string-to-id map with fixed reserved ids 0..3."""

    def __init__(self, tokens=()):
        self._index: dict[str, int] = {
            PAD_TOKEN: PAD_ID, CLS_TOKEN: CLS_ID, SEP_TOKEN: SEP_ID, UNK_TOKEN: UNK_ID,
        }
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self._index:
            self._index[token] = len(self._index)
        return self._index[token]

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def tokens(self) -> list[str]:
        """All tokens in id order (reserved entries first)."""
        return [t for t, _ in sorted(self._index.items(), key=lambda kv: kv[1])]

    @classmethod
    def from_examples(cls, examples) -> "Vocabulary":
        vocab = cls()
        for ex in examples:
            for tok in tokenize(ex.question):
                vocab.add(tok)
            for name in ex.table.header:
                for tok in tokenize(name):
                    vocab.add(tok)
            for row in ex.table.rows:
                for cell in row:
                    for tok in tokenize(cell):
                        vocab.add(tok)
        return vocab


@dataclass(frozen=True)
class TokenizedSequence:
    """A linearized example with per-token structural ids.

    ``segment_ids``: 0 for CLS/question/SEP, 1 for table tokens.
    ``column_ids``/``row_ids``: 1-based for table content, 0 elsewhere
    (header tokens carry row 0 and their column id).
    ``rank_ids``: 1-based position of a token within its cell, 0 for
    non-table tokens. ``origin``: 0-based (row, col) of the body cell a
    token came from, None for header/question/special tokens.
    ``positions``: original position ids; None means 0..len-1. Selections
    that compact a sequence for the task model keep original positions so
    masked and compacted forwards are interchangeable.
    """

    token_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    column_ids: tuple[int, ...]
    row_ids: tuple[int, ...]
    rank_ids: tuple[int, ...]
    origin: tuple[tuple[int, int] | None, ...]
    positions: tuple[int, ...] | None = None

    def __post_init__(self):
        n = len(self.token_ids)
        for name in ("segment_ids", "column_ids", "row_ids", "rank_ids", "origin"):
            if len(getattr(self, name)) != n:
                raise ContractError(f"{name} length != token count")
        if self.positions is not None and len(self.positions) != n:
            raise ContractError("positions length != token count")

    def __len__(self) -> int:
        return len(self.token_ids)

    def effective_positions(self) -> tuple[int, ...]:
        return self.positions if self.positions is not None else tuple(range(len(self)))

    def question_span(self) -> tuple[int, ...]:
        """Indices of CLS, question tokens, and SEP."""
        return tuple(i for i, s in enumerate(self.segment_ids) if s == 0)

    def table_indices(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.segment_ids) if s == 1)

    def subsequence(self, kept: list[int] | tuple[int, ...],
                    keep_positions: bool) -> "TokenizedSequence":
        """Restrict to ``kept`` indices (must be ascending).

        ``keep_positions=True`` carries original position ids through, which
        is what top-k compaction uses; ``False`` renumbers from zero, which
        is what the preprocessing selectors use.
        """
        kept = tuple(kept)
        if any(b <= a for a, b in zip(kept, kept[1:])):
            raise ContractError("kept indices must be strictly ascending")
        base = self.effective_positions()
        return TokenizedSequence(
            token_ids=tuple(self.token_ids[i] for i in kept),
            segment_ids=tuple(self.segment_ids[i] for i in kept),
            column_ids=tuple(self.column_ids[i] for i in kept),
            row_ids=tuple(self.row_ids[i] for i in kept),
            rank_ids=tuple(self.rank_ids[i] for i in kept),
            origin=tuple(self.origin[i] for i in kept),
            positions=tuple(base[i] for i in kept) if keep_positions else None,
        )


def _table_cells_reading_order(table: Table):
    """Yield (row_id, col_id, origin, tokens) with header first, 1-based ids."""
    for c, name in enumerate(table.header):
        yield 0, c + 1, None, tokenize(name)
    for r, row in enumerate(table.rows):
        for c, cell in enumerate(row):
            yield r + 1, c + 1, (r, c), tokenize(cell)


def linearized_length(example: Example) -> int:
    """Token count of the full linearization, computable without a vocabulary."""
    n = 2 + len(tokenize(example.question))
    for _, _, _, toks in _table_cells_reading_order(example.table):
        n += len(toks)
    return n


def linearize(example: Example, vocab: Vocabulary,
              max_len: int | None = None) -> TokenizedSequence:
    """Encode an example as [CLS] question [SEP] header cells.

    Never truncates: if the result would exceed ``max_len`` the caller must
    shorten it with ``cc_select`` or ``hem_select``; exceeding the budget
    raises instead of silently dropping tokens.
    """
    q_tokens = tokenize(example.question)
    if max_len is not None and len(q_tokens) + 2 > max_len:
        raise InputTooLongError(
            f"question alone needs {len(q_tokens) + 2} tokens, budget is {max_len}")

    ids = [CLS_ID] + [vocab.id_of(t) for t in q_tokens] + [SEP_ID]
    seg = [0] * len(ids)
    col = [0] * len(ids)
    row = [0] * len(ids)
    rank = [0] * len(ids)
    origin: list[tuple[int, int] | None] = [None] * len(ids)

    for row_id, col_id, org, toks in _table_cells_reading_order(example.table):
        for j, tok in enumerate(toks):
            ids.append(vocab.id_of(tok))
            seg.append(1)
            col.append(min(col_id, STRUCT_ID_CAP))
            row.append(min(row_id, STRUCT_ID_CAP))
            rank.append(min(j + 1, STRUCT_ID_CAP))
            origin.append(org)

    if max_len is not None and len(ids) > max_len:
        raise InputTooLongError(
            f"sequence length {len(ids)} exceeds budget {max_len}; "
            "apply cc_select or hem_select")
    return TokenizedSequence(tuple(ids), tuple(seg), tuple(col), tuple(row),
                             tuple(rank), tuple(origin))


def _cells_of(seq: TokenizedSequence, columns: set[int] | None = None) -> list[list[int]]:
    """Group table-token indices by cell, in reading order.

    Reading order is header row left-to-right, then body rows top-to-bottom,
    left-to-right; linearize emits tokens in exactly that order, so cells
    appear in order of their first token.
    """
    groups: dict[tuple[int, int], list[int]] = {}
    for i in range(len(seq)):
        if seq.segment_ids[i] != 1:
            continue
        if columns is not None and seq.column_ids[i] not in columns:
            continue
        groups.setdefault((seq.row_ids[i], seq.column_ids[i]), []).append(i)
    return [groups[k] for k in sorted(groups, key=lambda k: groups[k][0])]


def _round_robin(cells: list[list[int]], budget: int) -> list[int]:
    """First token of each cell, then second, until the budget is spent."""
    picked: list[int] = []
    depth = 0
    while len(picked) < budget:
        advanced = False
        for cell in cells:
            if depth < len(cell):
                picked.append(cell[depth])
                advanced = True
                if len(picked) == budget:
                    break
        if not advanced:
            break
        depth += 1
    return picked


def cc_select(seq: TokenizedSequence, limit: int) -> TokenizedSequence:
    """Cell-concatenation selection: keep an equal share of each cell.

    Question/CLS/SEP tokens always survive; table tokens are chosen
    round-robin over cells in reading order. Output preserves original
    token order and positions restart from zero.
    """
    qspan = seq.question_span()
    if limit < len(qspan):
        raise InputTooLongError(
            f"limit {limit} below question span {len(qspan)}")
    if len(seq) <= limit:
        return seq
    picked = _round_robin(_cells_of(seq), limit - len(qspan))
    kept = sorted(set(qspan) | set(picked))
    return seq.subsequence(kept, keep_positions=False)


def hem_rank_columns(question: str, table: Table) -> list[tuple[int, int]]:
    """Rank columns by distinct-question-token overlap, descending.

    Header and cell tokens both count. Ties break toward the lower column
    index. Returns (column index, score) pairs, columns 0-based.
    """
    q_tokens = set(tokenize(question))
    scores = []
    for c in range(table.n_cols):
        col_tokens = set(tokenize(table.header[c]))
        for row in table.rows:
            col_tokens.update(tokenize(row[c]))
        scores.append((c, len(q_tokens & col_tokens)))
    return sorted(scores, key=lambda cs: (-cs[1], cs[0]))


def hem_select(seq: TokenizedSequence, question: str, table: Table,
               limit: int) -> TokenizedSequence:
    """Overlap-ranked column selection.

    Whole columns are admitted in rank order while they fit; the first
    column that does not fit becomes the last admitted one and is cut by
    the round-robin rule restricted to its own cells. Question tokens
    always survive and original token order is preserved.
    """
    qspan = seq.question_span()
    if limit < len(qspan):
        raise InputTooLongError(f"limit {limit} below question span {len(qspan)}")
    if len(seq) <= limit:
        return seq

    budget = limit - len(qspan)
    by_column: dict[int, list[int]] = {}
    for i in seq.table_indices():
        by_column.setdefault(seq.column_ids[i], []).append(i)

    picked: list[int] = []
    for col0, _score in hem_rank_columns(question, table):
        col_id = col0 + 1
        members = by_column.get(col_id, [])
        if len(members) <= budget:
            picked.extend(members)
            budget -= len(members)
            if budget == 0:
                break
        else:
            picked.extend(_round_robin(_cells_of(seq, columns={col_id}), budget))
            break
    kept = sorted(set(qspan) | set(picked))
    return seq.subsequence(kept, keep_positions=False)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def example_to_dict(ex: Example) -> dict:
    rec: dict = {"question": ex.question, "header": list(ex.table.header),
                 "rows": [list(r) for r in ex.table.rows]}
    if ex.answer_coords is not None:
        rec["answers"] = sorted([list(rc) for rc in ex.answer_coords])
    else:
        rec["label"] = ex.label
    return rec


def example_from_dict(rec: dict) -> Example:
    table = Table.make(rec["header"], rec["rows"])
    if "answers" in rec:
        coords = frozenset((int(r), int(c)) for r, c in rec["answers"])
        return Example(rec["question"], table, answer_coords=coords)
    return Example(rec["question"], table, label=int(rec["label"]))


def write_jsonl(path, examples) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(example_to_dict(ex), sort_keys=True) + "\n")


def read_jsonl(path) -> list[Example]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(example_from_dict(json.loads(line)))
    return out


def read_csv_with_questions(table_csv, questions_path) -> list[Example]:
    """One unlabeled Example per question line, all against the CSV table.

    First CSV row is the header. Questions file holds one question per line.
    Returned examples carry label=None and no answer coords only in the
    sense of being unsupervised; they are encoded with a dummy label of 0
    so downstream plumbing treats them as classification inputs.
    """
    with open(table_csv, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ContractError(f"{table_csv} is empty")
    table = Table.make(rows[0], rows[1:])
    questions = [q.strip() for q in Path(questions_path).read_text(encoding="utf-8").splitlines()
                 if q.strip()]
    return [Example(q, table, label=0) for q in questions]
