"""Joint training of the scoring and task encoders.

The pipeline per example: linearize, shorten with a heuristic preselector,
score every token, keep the top-k tokens (or top columns), compact, and run
the task encoder with the kept tokens' scores as a soft attention bias.
Three loss modes differ in how the scorer learns:

* ``J``: the task loss alone; gradient reaches the scorer only through the
  attention bias.
* ``P``: the bias is detached and the scorer instead gets an auxiliary
  per-token relevance loss against answer-cell membership.
* ``PJ``: both paths at once.

The trainer is deterministic given (config, seed, thread count): metrics
records contain no wall-clock values, timing is reported separately.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import encoder as enc
from . import pruning as pr
from . import tensor as T
from .container import load_tensors, save_tensors
from .errors import ConfigError, ContractError, TrainingDivergedError
from .tables import Example, TokenizedSequence, Vocabulary, cc_select, hem_select, linearize

SCORE_FLOOR = -50.0  # soft scores are clipped here; -inf is reserved for hard masks

LOSS_MODES = ("J", "P", "PJ")
PRESELECTORS = ("cc", "hem")
SELECTION_MODES = ("token", "column")
TASK_TYPES = ("cell_selection", "classification")

# Published fine-tuning settings per benchmark; desk-scale runs train from
# scratch and want larger rates, so these are reference presets only.
BENCHMARK_TRAIN_PRESETS = {
    "wikisql": dict(learning_rate=6e-5, warmup_ratio=0.14, hidden_dropout=0.1,
                    attention_dropout=0.1, num_steps=50_000),
    "tabfact": dict(learning_rate=2e-5, warmup_ratio=0.05, hidden_dropout=0.07,
                    attention_dropout=0.0, num_steps=80_000),
    "wikitq": dict(learning_rate=1.9e-5, warmup_ratio=0.19, hidden_dropout=0.1,
                   attention_dropout=0.1, num_steps=50_000),
}


@dataclass(frozen=True)
class DoTConfig:
    pruning_preset: str = "mini"
    task_preset: str = "small"
    pre_limit: int = 64
    k: int = 16
    preselector: str = "cc"
    selection_mode: str = "token"
    loss_mode: str = "J"
    beta: float = 1.0
    task_type: str = "cell_selection"
    # positive-class weight for the per-token cell loss: kept sets hold few
    # answer tokens, and from-scratch training saturates on the all-negative
    # majority without it
    positive_weight: float = 1.0

    def __post_init__(self):
        if self.k > self.pre_limit:
            raise ConfigError(f"k={self.k} exceeds pre_limit={self.pre_limit}")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.positive_weight <= 0:
            raise ConfigError("positive_weight must be > 0")
        if self.preselector not in PRESELECTORS:
            raise ConfigError(f"unknown preselector {self.preselector!r}")
        if self.selection_mode not in SELECTION_MODES:
            raise ConfigError(f"unknown selection_mode {self.selection_mode!r}")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"unknown loss_mode {self.loss_mode!r}")
        if self.task_type not in TASK_TYPES:
            raise ConfigError(f"unknown task_type {self.task_type!r}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    warmup_ratio: float = 0.1
    hidden_dropout: float = 0.0
    attention_dropout: float = 0.0
    num_steps: int = 200
    batch_size: int = 4
    seed: int = 0
    precision: str = "f32"
    weight_decay: float = 0.01
    # learning-rate multiplier for the scoring tower; < 1 keeps early score
    # dynamics slow enough for the task head to learn answer detection first
    pruning_lr_scale: float = 1.0
    # stddev of selection-only score noise at step 1, annealed linearly to
    # zero by 60% of the run. Hard top-k freezes once scores stop moving;
    # training from scratch needs the kept set to keep rotating until the
    # towers have something to say. The attention bias always uses the
    # clean scores; evaluation never sees noise.
    exploration_noise: float = 0.0
    # global gradient-norm clip; None disables
    grad_clip: float | None = 1.0

    def __post_init__(self):
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise ConfigError("warmup_ratio must be in [0, 1]")
        if self.precision not in ("f32", "f64"):
            raise ConfigError("precision must be f32 or f64")
        if self.pruning_lr_scale < 0:
            raise ConfigError("pruning_lr_scale must be >= 0")
        if self.exploration_noise < 0:
            raise ConfigError("exploration_noise must be >= 0")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


@dataclass
class TaskWeights:
    """Task tower: encoder plus a token head or a CLS head."""

    encoder: enc.EncoderWeights
    head_w: T.Tensor
    head_b: T.Tensor

    def parameters(self) -> list[T.Tensor]:
        return self.encoder.parameters() + [self.head_w, self.head_b]


@dataclass
class DoTModel:
    config: DoTConfig
    vocab: Vocabulary
    pruning: pr.PruningWeights
    task: TaskWeights

    def parameters(self) -> list[T.Tensor]:
        return self.pruning.parameters() + self.task.parameters()

    def pruning_parameters(self) -> list[T.Tensor]:
        return self.pruning.parameters()


def build_model(config: DoTConfig, vocab: Vocabulary, dtype=np.float32,
                seed: int = 0, hidden_dropout: float = 0.0,
                attention_dropout: float = 0.0,
                pruning_config: enc.EncoderConfig | None = None,
                task_config: enc.EncoderConfig | None = None) -> DoTModel:
    """Construct both towers sized for the vocabulary and budgets.

    The task encoder's position table spans pre_limit because compaction
    keeps original position ids. Explicit encoder configs override the
    presets (hand-sized towers for verification suites).
    """
    pruning_cfg = pruning_config or enc.preset(
        config.pruning_preset, vocab_size=len(vocab), max_input=config.pre_limit,
        seed=seed, hidden_dropout=hidden_dropout, attention_dropout=attention_dropout)
    task_cfg = task_config or enc.preset(
        config.task_preset, vocab_size=len(vocab), max_input=config.pre_limit,
        seed=seed + 1, hidden_dropout=hidden_dropout,
        attention_dropout=attention_dropout)
    rng = np.random.Generator(np.random.PCG64(seed + 202))
    task = TaskWeights(
        encoder=enc.init_weights(task_cfg, dtype=dtype),
        head_w=T.Tensor(enc.truncated_normal(rng, (task_cfg.hidden, 1), dtype=dtype),
                        requires_grad=True),
        head_b=T.Tensor(np.zeros(1, dtype=dtype), requires_grad=True),
    )
    return DoTModel(config=config, vocab=vocab,
                    pruning=pr.init_pruning_weights(pruning_cfg, dtype=dtype),
                    task=task)


@dataclass
class DotOutputs:
    """Everything a loss or an evaluation needs from one forward pass."""

    pre_seq: TokenizedSequence
    compact_seq: TokenizedSequence
    scores: pr.PruningScores
    selection: pr.Selection
    token_logits: T.Tensor | None  # (n_kept,), cell_selection only
    cls_logit: T.Tensor | None  # (1, 1), classification only
    kept_table_slots: list[int]  # positions within compact_seq with table tokens
    kept_table_targets: np.ndarray | None  # answer-cell membership of those slots
    answer_pruned: bool
    bias_detached: bool


def preselect(seq: TokenizedSequence, example: Example, config: DoTConfig
              ) -> TokenizedSequence:
    if config.preselector == "cc":
        return cc_select(seq, config.pre_limit)
    return hem_select(seq, example.question, example.table, config.pre_limit)


def dot_forward(model: DoTModel, example: Example,
                train_rng: np.random.Generator | None = None,
                detach_bias: bool = False,
                scores_override: Callable[[TokenizedSequence], pr.PruningScores] | None = None,
                selection_override: pr.Selection | None = None,
                selection_noise: tuple[float, np.random.Generator] | None = None
                ) -> DotOutputs:
    """Full pipeline for one example.

    ``scores_override`` replaces the learned scorer (oracle injection and
    forced-zero-score baselines); ``detach_bias`` cuts the gradient path
    from the task loss into the scorer, which is what the P loss mode needs.
    ``selection_override`` pins the kept set; finite-difference harnesses
    use it because the hard selection is a step function of the scores.
    ``selection_noise`` perturbs only the selection, never the bias: the
    trainer's exploration mechanism.
    """
    cfg = model.config
    seq = linearize(example, model.vocab)
    pre_seq = preselect(seq, example, cfg)

    if scores_override is not None:
        scores = scores_override(pre_seq)
    else:
        scores = pr.score_tokens(model.pruning, pre_seq, train_rng=train_rng)
    clipped = pr.PruningScores(seq=pre_seq,
                               log_probs=T.maximum_scalar(scores.log_probs, SCORE_FLOOR),
                               logits=scores.logits)

    select_from = clipped
    if selection_noise is not None:
        sigma, noise_rng = selection_noise
        if sigma > 0:
            # row-correlated noise: tokens of a row explore together, so the
            # kept set contains coherent islands (a cell is only useful to
            # the task alongside the rest of its row)
            row_ids = np.asarray(pre_seq.row_ids)
            row_noise = noise_rng.normal(0.0, sigma, int(row_ids.max()) + 1)
            token_noise = noise_rng.normal(0.0, 0.25 * sigma, len(pre_seq))
            noisy = T.Tensor(clipped.values + row_noise[row_ids] + token_noise)
            select_from = pr.PruningScores(seq=pre_seq, log_probs=noisy, logits=noisy)

    if selection_override is not None:
        selection = selection_override
    elif cfg.selection_mode == "token":
        selection = pr.select_top_k_tokens(select_from, pre_seq, cfg.k)
    else:
        selection = pr.select_columns(pr.column_scores(select_from, pre_seq),
                                      pre_seq, cfg.k)

    compact_seq = pr.compact(pre_seq, selection)
    bias = pr.build_bias(selection, clipped, "soft")
    if detach_bias:
        bias = bias.detach()
    hidden, pooled = enc.forward(model.task.encoder, compact_seq, bias=bias,
                                 mode="key", train_rng=train_rng)

    kept_table_slots = [j for j, i in enumerate(selection.kept_indices)
                        if pre_seq.segment_ids[i] == 1]
    token_logits = None
    cls_logit = None
    kept_table_targets = None
    answer_pruned = False
    if cfg.task_type == "cell_selection":
        token_logits = T.reshape(
            T.add(T.matmul(hidden, model.task.head_w), model.task.head_b),
            (len(compact_seq),))
        if example.answer_coords is not None:
            kept_table_targets = np.array(
                [1.0 if compact_seq.origin[j] in example.answer_coords else 0.0
                 for j in kept_table_slots])
            answer_pruned = bool(kept_table_targets.sum() == 0)
    else:
        cls_logit = T.add(T.matmul(pooled, model.task.head_w), model.task.head_b)

    return DotOutputs(pre_seq=pre_seq, compact_seq=compact_seq, scores=clipped,
                      selection=selection, token_logits=token_logits,
                      cls_logit=cls_logit, kept_table_slots=kept_table_slots,
                      kept_table_targets=kept_table_targets,
                      answer_pruned=answer_pruned, bias_detached=detach_bias)


def _task_scalar_loss(outputs: DotOutputs, example: Example,
                      pos_weight: float = 1.0) -> T.Tensor:
    """Binary cross-entropy head loss, over kept table tokens or the CLS logit."""
    if outputs.cls_logit is not None:
        if example.label is None:
            raise ContractError("classification loss needs a label")
        return T.bce_with_logits(T.reshape(outputs.cls_logit, (1,)),
                                 np.array([float(example.label)]))
    if example.answer_coords is None:
        raise ContractError("cell-selection loss needs answer coordinates")
    if not outputs.kept_table_slots:
        return T.Tensor(np.asarray(0.0, dtype=outputs.scores.log_probs.dtype))
    kept_logits = T.reshape(
        T.take_rows(T.reshape(outputs.token_logits, (len(outputs.compact_seq), 1)),
                    outputs.kept_table_slots),
        (len(outputs.kept_table_slots),))
    return T.bce_with_logits(kept_logits, outputs.kept_table_targets,
                             pos_weight=pos_weight)


def _pruning_scalar_loss(outputs: DotOutputs, example: Example,
                         pos_weight: float = 1.0) -> T.Tensor:
    """Per-token relevance BCE over all preselected tokens.

    Targets are answer-cell membership; without answer coordinates there is
    no per-token supervision and the term is zero. The positive-class
    weight applies here too: answer tokens are as rare for the scorer as
    they are for the task head.
    """
    if example.answer_coords is None:
        return T.Tensor(np.asarray(0.0, dtype=outputs.scores.logits.dtype))
    pre = outputs.pre_seq
    targets = np.array([1.0 if pre.origin[i] in example.answer_coords else 0.0
                        for i in range(len(pre))])
    return T.bce_with_logits(outputs.scores.logits, targets, pos_weight=pos_weight)


def loss_j_dot(outputs: DotOutputs, example: Example, beta: float,
               pos_weight: float = 1.0) -> T.Tensor:
    """Joint loss: beta times the task scalar loss, bias path live."""
    return T.mul(_task_scalar_loss(outputs, example, pos_weight), float(beta))


def loss_p_dot(outputs: DotOutputs, example: Example, beta: float,
               pos_weight: float = 1.0) -> T.Tensor:
    """Detached-bias task loss plus the auxiliary relevance loss."""
    if not outputs.bias_detached:
        raise ContractError("P loss requires dot_forward(detach_bias=True)")
    task = _task_scalar_loss(outputs, example, pos_weight)
    return T.mul(T.add(task, _pruning_scalar_loss(outputs, example, pos_weight)),
                 float(beta))


def loss_pj_dot(outputs: DotOutputs, example: Example, beta: float,
                pruning_loss_weight: float = 1.0,
                pos_weight: float = 1.0) -> T.Tensor:
    """Joint loss plus the auxiliary relevance loss."""
    task = _task_scalar_loss(outputs, example, pos_weight)
    aux = T.mul(_pruning_scalar_loss(outputs, example, pos_weight),
                float(pruning_loss_weight))
    return T.mul(T.add(task, aux), float(beta))


def compute_loss(model: DoTModel, outputs: DotOutputs, example: Example) -> T.Tensor:
    mode, beta = model.config.loss_mode, model.config.beta
    pw = model.config.positive_weight
    if mode == "J":
        return loss_j_dot(outputs, example, beta, pos_weight=pw)
    if mode == "P":
        return loss_p_dot(outputs, example, beta, pos_weight=pw)
    return loss_pj_dot(outputs, example, beta, pos_weight=pw)


def answer_score_gap(scores: pr.PruningScores, selection: pr.Selection,
                     example: Example) -> float | None:
    """Mean score of answer-cell tokens minus mean score of kept tokens.

    None when no answer token survived preselection (or the example has no
    answer cells at all).
    """
    if example.answer_coords is None:
        return None
    seq = scores.seq
    answer_idx = [i for i in range(len(seq)) if seq.origin[i] in example.answer_coords]
    if not answer_idx:
        return None
    s = scores.values
    return float(s[answer_idx].mean() - s[list(selection.kept_indices)].mean())


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def lr_at(step: int, config: TrainConfig) -> float:
    """Linear warmup over warmup_ratio * num_steps, then linear decay to 0."""
    warmup = config.warmup_ratio * config.num_steps
    if warmup > 0 and step <= warmup:
        return config.learning_rate * step / warmup
    remaining = config.num_steps - warmup
    if remaining <= 0:
        return config.learning_rate
    return config.learning_rate * max(0.0, (config.num_steps - step) / remaining)


@dataclass
class TrainResult:
    model: DoTModel
    metrics: list[dict]
    npe_s: float
    step_seconds: list[float] = field(default_factory=list)


def train(dot_config: DoTConfig, train_config: TrainConfig, dataset: list[Example],
          model: DoTModel | None = None,
          step_callback: Callable[[int, DoTModel], None] | None = None,
          stop_condition: Callable[[int, DoTModel], bool] | None = None,
          scores_override=None) -> TrainResult:
    """Run the optimization loop; deterministic given configs and seed.

    Per-step metrics records carry no timing; examples-per-second is
    computed around forward+backward+update only and excludes the first 10
    steps. ``stop_condition`` may end the run early (checked after
    ``step_callback``, every step). ``scores_override`` bypasses the scoring
    tower entirely (single-tower baselines); only the task tower trains.
    """
    if not dataset:
        raise ContractError("dataset is empty")
    if model is None:
        vocab = Vocabulary.from_examples(dataset)
        model = build_model(dot_config, vocab, dtype=train_config.dtype,
                            seed=train_config.seed,
                            hidden_dropout=train_config.hidden_dropout,
                            attention_dropout=train_config.attention_dropout)
    if scores_override:
        groups = [(model.task.parameters(), 1.0, {})]
    elif train_config.pruning_lr_scale != 1.0:
        groups = [(model.pruning.parameters(), train_config.pruning_lr_scale, {}),
                  (model.task.parameters(), 1.0, {})]
    else:
        groups = [(model.parameters(), 1.0, {})]
    params = [p for g, _, _ in groups for p in g]
    data_rng = np.random.Generator(np.random.PCG64(train_config.seed + 1))
    dropout_rng = (np.random.Generator(np.random.PCG64(train_config.seed + 2))
                   if (train_config.hidden_dropout or train_config.attention_dropout)
                   else None)
    explore_rng = np.random.Generator(np.random.PCG64(train_config.seed + 3))
    anneal_until = max(1.0, 0.6 * train_config.num_steps)
    detach = dot_config.loss_mode == "P"

    order: list[int] = []
    metrics: list[dict] = []
    step_seconds: list[float] = []
    for step in range(1, train_config.num_steps + 1):
        while len(order) < train_config.batch_size:
            epoch = list(data_rng.permutation(len(dataset)))
            order.extend(epoch)
        batch = [dataset[i] for i in order[:train_config.batch_size]]
        order = order[train_config.batch_size:]

        sigma = train_config.exploration_noise * max(0.0, 1.0 - step / anneal_until)
        noise = (sigma, explore_rng) if train_config.exploration_noise > 0 else None

        t0 = time.perf_counter()
        losses = []
        gaps = []
        pruned = 0
        for ex in batch:
            out = dot_forward(model, ex, train_rng=dropout_rng, detach_bias=detach,
                              scores_override=scores_override, selection_noise=noise)
            losses.append(compute_loss(model, out, ex))
            gap = answer_score_gap(out.scores, out.selection, ex)
            if gap is not None:
                gaps.append(gap)
            pruned += int(out.answer_pruned)
        total = T.mul(losses[0] if len(losses) == 1 else _sum_losses(losses),
                      1.0 / len(batch))
        loss_val = float(total.data)
        if not np.isfinite(loss_val):
            raise TrainingDivergedError(
                f"loss became {loss_val} at step {step} (lr={lr_at(step, train_config)})")
        T.zero_grads(params)
        T.backward(total, params=params)
        if train_config.grad_clip is not None:
            clip_grad_norm(params, train_config.grad_clip)
        lr = lr_at(step, train_config)
        for group, scale, opt_state in groups:
            T.adamw_step(group, [p.grad for p in group], opt_state, lr * scale,
                         train_config.weight_decay)
        step_seconds.append(time.perf_counter() - t0)

        metrics.append({
            "step": step,
            "loss": loss_val,
            "lr": lr,
            "answer_score_gap": float(np.mean(gaps)) if gaps else None,
            "answer_pruned": pruned,
        })
        if step_callback is not None:
            step_callback(step, model)
        if stop_condition is not None and stop_condition(step, model):
            break

    steady = step_seconds[10:] if len(step_seconds) > 10 else step_seconds
    npe_s = (train_config.batch_size * len(steady) / sum(steady)) if steady else 0.0
    return TrainResult(model=model, metrics=metrics, npe_s=npe_s,
                       step_seconds=step_seconds)


def _sum_losses(losses: list[T.Tensor]) -> T.Tensor:
    total = losses[0]
    for l in losses[1:]:
        total = T.add(total, l)
    return total


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def predict_cells(outputs: DotOutputs) -> frozenset[tuple[int, int]]:
    """Predicted answer cells: the kept cell with the highest mean token logit."""
    if not outputs.kept_table_slots:
        return frozenset()
    logits = outputs.token_logits.data
    seq = outputs.compact_seq
    by_cell: dict[tuple[int, int], list[float]] = {}
    for j in outputs.kept_table_slots:
        org = seq.origin[j]
        if org is not None:
            by_cell.setdefault(org, []).append(float(logits[j]))
    if not by_cell:
        return frozenset()
    best = max(by_cell, key=lambda cell: (np.mean(by_cell[cell]), (-cell[0], -cell[1])))
    return frozenset({best})


@dataclass
class EvalReport:
    accuracy: float
    n_examples: int
    mean_answer_score_gap: float | None
    answer_pruned_rate: float
    gaps: list[float]
    correct_flags: list[bool]
    predictions: list


def evaluate(model: DoTModel, examples: list[Example],
             scores_override=None) -> EvalReport:
    """Denotation accuracy plus score-gap statistics, dropout disabled.

    ``scores_override(seq, example)`` replaces the learned scorer per
    example (oracle injection).
    """
    correct = []
    predictions = []
    gaps = []
    pruned = 0
    with T.no_grad():
        for ex in examples:
            override = (None if scores_override is None
                        else (lambda s, ex=ex: scores_override(s, ex)))
            out = dot_forward(model, ex, scores_override=override)
            if model.config.task_type == "cell_selection":
                pred = predict_cells(out)
                correct.append(pred == ex.answer_coords)
            else:
                pred = int(out.cls_logit.data.ravel()[0] > 0)
                correct.append(pred == ex.label)
            predictions.append(pred)
            gap = answer_score_gap(out.scores, out.selection, ex)
            if gap is not None:
                gaps.append(gap)
            pruned += int(out.answer_pruned)
    return EvalReport(
        accuracy=float(np.mean(correct)) if correct else 0.0,
        n_examples=len(examples),
        mean_answer_score_gap=float(np.mean(gaps)) if gaps else None,
        answer_pruned_rate=pruned / len(examples) if examples else 0.0,
        gaps=gaps,
        correct_flags=[bool(c) for c in correct],
        predictions=predictions,
    )


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(path, model: DoTModel) -> None:
    named: dict[str, np.ndarray] = {}
    for prefix, tower in (("pruning", model.pruning), ("task", model.task)):
        for k, t in tower.encoder.named_tensors().items():
            named[f"{prefix}.{k}"] = t.data
        named[f"{prefix}.head_w"] = tower.head_w.data
        named[f"{prefix}.head_b"] = tower.head_b.data
    header = {
        "kind": "dot_model",
        "config": vars(model.config) | {},
        "vocab": model.vocab.tokens(),
        "pruning_config": _config_dict(model.pruning.encoder.config),
        "task_config": _config_dict(model.task.encoder.config),
    }
    save_tensors(path, named, header)


def _config_dict(cfg: enc.EncoderConfig) -> dict:
    return {k: getattr(cfg, k) for k in (
        "num_layers", "hidden", "num_heads", "intermediate", "vocab_size",
        "max_input", "hidden_dropout", "attention_dropout", "seed")}


def load_checkpoint(path) -> DoTModel:
    header, tensors = load_tensors(path)
    if header.get("kind") != "dot_model":
        raise ContractError(f"{path} is not a model checkpoint")
    config = DoTConfig(**header["config"])
    vocab = Vocabulary(header["vocab"][4:])  # reserved entries re-added by ctor
    pruning_cfg = enc.EncoderConfig(**header["pruning_config"])
    task_cfg = enc.EncoderConfig(**header["task_config"])
    dtype = tensors["task.head_w"].dtype.type
    pruning = pr.init_pruning_weights(pruning_cfg, dtype=dtype)
    task_enc = enc.init_weights(task_cfg, dtype=dtype)
    rng = np.random.Generator(np.random.PCG64(0))
    task = TaskWeights(encoder=task_enc,
                       head_w=T.Tensor(enc.truncated_normal(rng, (task_cfg.hidden, 1),
                                                            dtype=dtype),
                                       requires_grad=True),
                       head_b=T.Tensor(np.zeros(1, dtype=dtype), requires_grad=True))
    model = DoTModel(config=config, vocab=vocab, pruning=pruning, task=task)
    for prefix, tower in (("pruning", model.pruning), ("task", model.task)):
        named = tower.encoder.named_tensors()
        for k, t in named.items():
            t.data = tensors[f"{prefix}.{k}"].astype(dtype)
        tower.head_w.data = tensors[f"{prefix}.head_w"].astype(dtype)
        tower.head_b.data = tensors[f"{prefix}.head_b"].astype(dtype)
    return model
