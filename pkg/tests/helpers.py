"""Shared builders for tests: small random tables and token sequences."""

import numpy as np

from dotprune import tables as tb


def random_example(rng, n_rows=2, n_cols=2, cell_tokens=2, vocab_words=12,
                   question_tokens=2):
    words = [f"w{i}" for i in range(vocab_words)]
    header = [words[rng.integers(len(words))] for _ in range(n_cols)]
    rows = [[" ".join(rng.choice(words, size=rng.integers(1, cell_tokens + 1)))
             for _ in range(n_cols)] for _ in range(n_rows)]
    question = " ".join(rng.choice(words, size=question_tokens))
    table = tb.Table.make(header, rows)
    answer = (int(rng.integers(n_rows)), int(rng.integers(n_cols)))
    return tb.Example(question, table, answer_coords=frozenset({answer}))


def random_sequence(rng, max_len=32, vocab_size=32):
    """A structurally plausible TokenizedSequence of length <= max_len."""
    while True:
        ex = random_example(
            rng,
            n_rows=int(rng.integers(1, 4)),
            n_cols=int(rng.integers(1, 4)),
            cell_tokens=int(rng.integers(1, 3)),
            question_tokens=int(rng.integers(1, 4)),
        )
        vocab = tb.Vocabulary.from_examples([ex])
        seq = tb.linearize(ex, vocab)
        if len(seq) <= max_len and len(vocab) <= vocab_size:
            return seq


def compacted(seq, drop):
    """Sequence without the dropped indices, original positions preserved."""
    kept = [i for i in range(len(seq)) if i not in set(drop)]
    return seq.subsequence(kept, keep_positions=True)


def drop_bias(seq, drop):
    bias = np.zeros(len(seq))
    bias[list(drop)] = -np.inf
    return bias
