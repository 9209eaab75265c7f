"""Token relevance scoring, top-k / column selection, and drop verification.

A small encoder scores every token of a sequence with a log-probability of
being relevant, s = log(sigmoid(logit)) in (-inf, 0]. Selection keeps the
question span unconditionally and fills the remaining budget either with
the best-scoring table tokens or with whole columns ranked by mean score.
The kept tokens' scores become an additive attention bias for the task
encoder; scoring stays differentiable through that bias.

``hard_drop_equivalence`` is the verification harness: it compares a
forward pass under a -inf bias against a forward pass on the compacted
sequence and reports the largest deviation at surviving positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from . import tensor as T
from .errors import BudgetError, ContractError
from .tables import TokenizedSequence


@dataclass
class PruningWeights:
    """Scoring tower: an encoder plus a per-token sigmoid head."""

    encoder: enc.EncoderWeights
    head_w: T.Tensor
    head_b: T.Tensor

    def parameters(self) -> list[T.Tensor]:
        return self.encoder.parameters() + [self.head_w, self.head_b]


def init_pruning_weights(config: enc.EncoderConfig, dtype=np.float32) -> PruningWeights:
    rng = np.random.Generator(np.random.PCG64(config.seed + 101))
    return PruningWeights(
        encoder=enc.init_weights(config, dtype=dtype),
        head_w=T.Tensor(enc.truncated_normal(rng, (config.hidden, 1), dtype=dtype),
                        requires_grad=True),
        head_b=T.Tensor(np.zeros(1, dtype=dtype), requires_grad=True),
    )


@dataclass
class PruningScores:
    """Per-token log-probabilities aligned with a sequence.

    ``log_probs``/``logits`` stay in the autodiff graph; ``values`` is the
    detached numpy view selections are computed from.
    """

    seq: TokenizedSequence
    log_probs: T.Tensor
    logits: T.Tensor

    @property
    def values(self) -> np.ndarray:
        return self.log_probs.data

    def __len__(self) -> int:
        return len(self.seq)


@dataclass(frozen=True)
class Selection:
    """An ordered subset of sequence positions within a token budget."""

    kept_indices: tuple[int, ...]
    mode: str
    k: int

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.kept_indices, self.kept_indices[1:])):
            raise ContractError("kept_indices must be strictly ascending")
        if len(self.kept_indices) > self.k:
            raise ContractError("selection exceeds its budget")


def score_tokens(weights: PruningWeights, seq: TokenizedSequence,
                 train_rng: np.random.Generator | None = None) -> PruningScores:
    """Score every token with log P(relevant); differentiable."""
    hidden, _ = enc.forward(weights.encoder, seq, train_rng=train_rng)
    logits = T.reshape(T.add(T.matmul(hidden, weights.head_w), weights.head_b),
                       (len(seq),))
    return PruningScores(seq=seq, log_probs=T.log_sigmoid(logits), logits=logits)


def constant_scores(seq: TokenizedSequence, value: float = 0.0) -> PruningScores:
    """Fixed scores outside any graph (oracle injection, baselines)."""
    data = np.full(len(seq), float(value))
    t = T.Tensor(data)
    return PruningScores(seq=seq, log_probs=t, logits=t)


def oracle_scores(seq: TokenizedSequence, answer_coords, floor: float = -50.0
                  ) -> PruningScores:
    """Score 0 for tokens in any answer row, ``floor`` for other table tokens."""
    answer_rows = {r for r, _ in answer_coords}
    data = np.zeros(len(seq))
    for i in range(len(seq)):
        if seq.segment_ids[i] == 1 and (seq.row_ids[i] - 1) not in answer_rows:
            data[i] = floor
    t = T.Tensor(data)
    return PruningScores(seq=seq, log_probs=t, logits=t)


def select_top_k_tokens(scores: PruningScores, seq: TokenizedSequence,
                        k: int) -> Selection:
    """Keep the question span plus the best-scoring table tokens.

    Ties break toward the earlier position; output indices are ascending.
    """
    qspan = seq.question_span()
    if k < len(qspan):
        raise BudgetError(f"k={k} below question span {len(qspan)}")
    budget = k - len(qspan)
    table = seq.table_indices()
    s = scores.values
    ranked = sorted(table, key=lambda i: (-s[i], i))
    kept = sorted(set(qspan) | set(ranked[:budget]))
    return Selection(tuple(kept), mode="token", k=k)


def column_scores(scores: PruningScores, seq: TokenizedSequence) -> dict[int, float]:
    """Mean score per column id over header and cell tokens."""
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    s = scores.values
    for i in seq.table_indices():
        c = seq.column_ids[i]
        sums[c] = sums.get(c, 0.0) + float(s[i])
        counts[c] = counts.get(c, 0) + 1
    if not sums:
        raise ContractError("sequence has no table tokens")
    return {c: sums[c] / counts[c] for c in sums}


def select_columns(col_scores: dict[int, float], seq: TokenizedSequence,
                   k: int) -> Selection:
    """Admit whole columns by descending mean score while they fit.

    A column that does not fit is skipped and later columns are still
    considered. Ties break toward the lower column id.
    """
    qspan = seq.question_span()
    if k < len(qspan):
        raise BudgetError(f"k={k} below question span {len(qspan)}")
    budget = k - len(qspan)
    members: dict[int, list[int]] = {}
    for i in seq.table_indices():
        members.setdefault(seq.column_ids[i], []).append(i)
    kept = set(qspan)
    for c in sorted(col_scores, key=lambda c: (-col_scores[c], c)):
        size = len(members.get(c, ()))
        if size <= budget:
            kept.update(members.get(c, ()))
            budget -= size
    return Selection(tuple(sorted(kept)), mode="column", k=k)


def compact(seq: TokenizedSequence, selection: Selection) -> TokenizedSequence:
    """The kept subsequence with original position ids preserved."""
    return seq.subsequence(selection.kept_indices, keep_positions=True)


def build_bias(selection: Selection, scores: PruningScores,
               mode: str = "soft") -> T.Tensor | np.ndarray:
    """Bias vector for the task encoder.

    ``soft``: over the compacted sequence, the kept table tokens carry their
    scores (gradient flows back into the scorer) and the question span
    carries zero. ``hard``: over the uncompacted sequence, dropped positions
    carry -inf; used only by the equivalence harness.
    """
    seq = scores.seq
    if mode == "hard":
        bias = np.zeros(len(seq))
        dropped = set(range(len(seq))) - set(selection.kept_indices)
        bias[sorted(dropped)] = -np.inf
        return bias
    if mode != "soft":
        raise ContractError(f"unknown bias mode {mode!r}")
    kept = list(selection.kept_indices)
    keep_mask = np.array([1.0 if seq.segment_ids[i] == 1 else 0.0 for i in kept])
    gathered = T.take_rows(T.reshape(scores.log_probs, (len(seq), 1)), kept)
    return T.reshape(T.mul(gathered, T.Tensor(keep_mask.reshape(-1, 1))),
                     (len(kept),))


def hard_drop_equivalence(weights: enc.EncoderWeights, seq: TokenizedSequence,
                          drop_set, mode: str = "symmetric") -> float:
    """Max |masked forward - compacted forward| over surviving positions.

    ``drop_set`` must not touch the question span. Run in 64-bit weights for
    meaningful thresholds.
    """
    drop = sorted(set(drop_set))
    qspan = set(seq.question_span())
    if any(d in qspan for d in drop):
        raise ContractError("drop_set must not contain question-span tokens")
    if not drop:
        return 0.0
    bias = np.zeros(len(seq))
    bias[drop] = -np.inf
    kept = [i for i in range(len(seq)) if i not in set(drop)]
    with T.no_grad():
        full, _ = enc.forward(weights, seq, bias=bias, mode=mode)
        compacted, _ = enc.forward(weights, seq.subsequence(kept, keep_positions=True))
    return float(np.max(np.abs(full.data[kept] - compacted.data)))
