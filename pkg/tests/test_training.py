import numpy as np
import pytest

from dotprune import encoder as enc
from dotprune import pruning as pr
from dotprune import synth
from dotprune import tensor as T
from dotprune import training as tr
from dotprune.errors import ConfigError, ContractError, TrainingDivergedError
from dotprune.tables import Vocabulary


def tiny_model(dataset, dot_config=None, dtype=np.float64, seed=0,
               hidden=16, layers=2):
    """A DoTModel with hand-sized towers, bypassing the published presets."""
    cfg = dot_config or tr.DoTConfig(pre_limit=48, k=10)
    vocab = Vocabulary.from_examples(dataset)
    enc_kw = dict(num_heads=2, intermediate=2 * hidden, vocab_size=len(vocab),
                  max_input=cfg.pre_limit)
    p_cfg = enc.EncoderConfig(num_layers=layers, hidden=hidden, seed=seed, **enc_kw)
    t_cfg = enc.EncoderConfig(num_layers=layers, hidden=hidden, seed=seed + 1, **enc_kw)
    rng = np.random.Generator(np.random.PCG64(seed + 202))
    task = tr.TaskWeights(
        encoder=enc.init_weights(t_cfg, dtype=dtype),
        head_w=T.Tensor(enc.truncated_normal(rng, (hidden, 1), dtype=dtype),
                        requires_grad=True),
        head_b=T.Tensor(np.zeros(1, dtype=dtype), requires_grad=True),
    )
    return tr.DoTModel(config=cfg, vocab=vocab,
                       pruning=pr.init_pruning_weights(p_cfg, dtype=dtype), task=task)


def lookup_data(n=8, seed=0, **kw):
    spec_kw = dict(seed=seed, n_examples=n, min_rows=2, max_rows=3, min_cols=2,
                   max_cols=3, max_cell_tokens=1, vocab_size=24)
    spec_kw.update(kw)
    return synth.generate(synth.GeneratorSpec(**spec_kw))


def test_dot_config_validation():
    with pytest.raises(ConfigError):
        tr.DoTConfig(pre_limit=16, k=32)
    with pytest.raises(ConfigError):
        tr.DoTConfig(beta=-1.0)
    with pytest.raises(ConfigError):
        tr.DoTConfig(loss_mode="Q")
    with pytest.raises(ConfigError):
        tr.TrainConfig(warmup_ratio=1.5)


def test_forward_with_zero_scores_matches_plain_task_model():
    data = lookup_data()
    cfg = tr.DoTConfig(pre_limit=48, k=48)
    model = tiny_model(data, cfg)
    ex = data[0]
    out = tr.dot_forward(model, ex, scores_override=lambda s: pr.constant_scores(s, 0.0))
    with T.no_grad():
        from dotprune.tables import linearize
        pre = tr.preselect(linearize(ex, model.vocab), ex, cfg)
        hidden, _ = enc.forward(model.task.encoder, pre)
        plain_logits = T.reshape(
            T.add(T.matmul(hidden, model.task.head_w), model.task.head_b), (len(pre),))
    np.testing.assert_array_equal(out.token_logits.data, plain_logits.data)


def test_classification_head_is_single_logit():
    data = synth.generate(synth.GeneratorSpec(seed=2, n_examples=4, min_rows=2,
                                              max_rows=2, max_cell_tokens=1,
                                              task_type="entailment"))
    cfg = tr.DoTConfig(pre_limit=48, k=12, task_type="classification")
    model = tiny_model(data, cfg)
    out = tr.dot_forward(model, data[0])
    assert out.cls_logit.shape == (1, 1)
    assert out.token_logits is None


def test_cell_selection_logits_cover_kept_table_tokens():
    data = lookup_data()
    model = tiny_model(data)
    out = tr.dot_forward(model, data[0])
    assert out.token_logits.shape == (len(out.compact_seq),)
    assert all(out.compact_seq.segment_ids[j] == 1 for j in out.kept_table_slots)
    assert out.kept_table_targets.shape == (len(out.kept_table_slots),)


def test_loss_j_perfect_logits_near_zero():
    data = lookup_data()
    model = tiny_model(data)
    ex = data[0]
    out = tr.dot_forward(model, ex)
    forced = np.where(out.kept_table_targets > 0, 40.0, -40.0)
    logits = np.zeros(len(out.compact_seq))
    for j, v in zip(out.kept_table_slots, forced):
        logits[j] = v
    out.token_logits = T.Tensor(logits)
    assert tr.loss_j_dot(out, ex, beta=1.0).item() < 1e-12


def test_loss_j_gradient_reaches_pruning_weights():
    data = lookup_data()
    model = tiny_model(data)
    ex = data[0]
    out = tr.dot_forward(model, ex)
    loss = tr.loss_j_dot(out, ex, beta=1.0)
    T.zero_grads(model.parameters())
    T.backward(loss, params=model.parameters())
    head_grad = np.abs(model.pruning.head_w.grad).max()
    assert head_grad > 0.0


def test_loss_j_beta_zero_gives_zero_loss_and_grads():
    data = lookup_data()
    model = tiny_model(data)
    ex = data[0]
    out = tr.dot_forward(model, ex)
    loss = tr.loss_j_dot(out, ex, beta=0.0)
    assert loss.item() == 0.0
    T.zero_grads(model.parameters())
    T.backward(loss, params=model.parameters())
    assert all(np.all(p.grad == 0) for p in model.parameters())


def test_j_gradients_flow_only_through_bias():
    # With the bias detached, the J loss must not reach the scorer at all.
    data = lookup_data()
    model = tiny_model(data)
    ex = data[0]
    out = tr.dot_forward(model, ex, detach_bias=True)
    loss = tr.loss_j_dot(out, ex, beta=1.0)
    T.zero_grads(model.parameters())
    T.backward(loss, params=model.parameters())
    assert all(np.all(p.grad == 0) for p in model.pruning_parameters())
    assert any(np.any(p.grad != 0) for p in model.task.parameters())


def test_loss_p_requires_detached_bias():
    data = lookup_data()
    model = tiny_model(data)
    ex = data[0]
    out = tr.dot_forward(model, ex)
    with pytest.raises(ContractError):
        tr.loss_p_dot(out, ex, beta=1.0)


def test_loss_p_task_term_detached_but_aux_term_reaches_scorer():
    data = lookup_data()
    model = tiny_model(data)
    ex = data[0]
    out = tr.dot_forward(model, ex, detach_bias=True)
    loss = tr.loss_p_dot(out, ex, beta=1.0)
    T.zero_grads(model.parameters())
    T.backward(loss, params=model.parameters())
    assert np.abs(model.pruning.head_w.grad).max() > 0.0


def test_pruning_term_zero_at_perfect_scores():
    data = lookup_data()
    model = tiny_model(data)
    ex = data[0]
    out = tr.dot_forward(model, ex)
    pre = out.pre_seq
    perfect = np.array([40.0 if pre.origin[i] in ex.answer_coords else -40.0
                        for i in range(len(pre))])
    out.scores = pr.PruningScores(seq=pre, log_probs=T.Tensor(perfect),
                                  logits=T.Tensor(perfect))
    assert tr._pruning_scalar_loss(out, ex).item() < 1e-12


def test_p_equals_pj_value_when_bias_zero_everywhere():
    data = lookup_data()
    model = tiny_model(data)
    ex = data[0]
    override = lambda s: pr.constant_scores(s, 0.0)
    detached = tr.dot_forward(model, ex, detach_bias=True, scores_override=override)
    attached = tr.dot_forward(model, ex, detach_bias=False, scores_override=override)
    p = tr.loss_p_dot(detached, ex, beta=0.7).item()
    pj = tr.loss_pj_dot(attached, ex, beta=0.7).item()
    assert abs(p - pj) < 1e-12


def test_pj_gradient_is_sum_of_both_paths():
    # By construction PJ = (task|bias) + aux, J = (task|bias), P = detached + aux,
    # so on the scorer's parameters grad(PJ) == grad(J) + grad(P).
    data = lookup_data()
    model = tiny_model(data)
    ex = data[0]

    def grads_of(loss_fn, detach):
        out = tr.dot_forward(model, ex, detach_bias=detach)
        T.zero_grads(model.parameters())
        T.backward(loss_fn(out), params=model.parameters())
        return [p.grad.copy() for p in model.pruning_parameters()]

    g_pj = grads_of(lambda o: tr.loss_pj_dot(o, ex, 1.0), detach=False)
    g_j = grads_of(lambda o: tr.loss_j_dot(o, ex, 1.0), detach=False)
    g_p = grads_of(lambda o: tr.loss_p_dot(o, ex, 1.0), detach=True)
    assert any(np.abs(g).max() > 0 for g in g_j)
    assert any(np.abs(g).max() > 0 for g in g_p)
    for a, b, c in zip(g_pj, g_j, g_p):
        np.testing.assert_allclose(a, b + c, atol=1e-12)


def test_benchmark_train_presets():
    p = tr.BENCHMARK_TRAIN_PRESETS
    assert p["wikisql"] == dict(learning_rate=6e-5, warmup_ratio=0.14,
                                hidden_dropout=0.1, attention_dropout=0.1,
                                num_steps=50_000)
    assert p["tabfact"]["num_steps"] == 80_000
    assert p["wikitq"]["learning_rate"] == 1.9e-5
    for preset in p.values():
        tr.TrainConfig(**preset)  # all presets are valid configs


def test_pj_reduces_to_j_with_zero_pruning_weight():
    data = lookup_data()
    model = tiny_model(data)
    ex = data[0]
    out = tr.dot_forward(model, ex)
    pj = tr.loss_pj_dot(out, ex, beta=1.3, pruning_loss_weight=0.0).item()
    j = tr.loss_j_dot(out, ex, beta=1.3).item()
    assert abs(pj - j) < 1e-12


def test_pj_loss_finite_at_score_floor():
    data = lookup_data()
    model = tiny_model(data)
    model.pruning.head_w.data[:] = 0.0
    model.pruning.head_b.data[:] = -60.0  # scores clip at the floor
    ex = data[0]
    out = tr.dot_forward(model, ex)
    assert (out.scores.values >= tr.SCORE_FLOOR).all()
    assert np.isfinite(tr.loss_pj_dot(out, ex, beta=1.0).item())


def test_answer_score_gap_uniform_scores_zero():
    data = lookup_data()
    model = tiny_model(data)
    ex = data[0]
    out = tr.dot_forward(model, ex, scores_override=lambda s: pr.constant_scores(s, -0.3))
    assert tr.answer_score_gap(out.scores, out.selection, ex) == pytest.approx(0.0, abs=1e-12)


def test_answer_score_gap_positive_when_answers_score_highest():
    data = lookup_data()
    model = tiny_model(data)
    ex = data[0]
    out = tr.dot_forward(
        model, ex, scores_override=lambda s: pr.oracle_scores(s, ex.answer_coords))
    assert tr.answer_score_gap(out.scores, out.selection, ex) > 0.0


def test_answer_score_gap_matches_two_mean_oracle():
    rng = np.random.default_rng(3)
    data = lookup_data()
    model = tiny_model(data)
    ex = data[0]
    out = tr.dot_forward(model, ex)
    vals = -rng.random(len(out.pre_seq))
    scores = pr.PruningScores(seq=out.pre_seq, log_probs=T.Tensor(vals),
                              logits=T.Tensor(vals))
    got = tr.answer_score_gap(scores, out.selection, ex)
    ans = [i for i in range(len(out.pre_seq))
           if out.pre_seq.origin[i] in ex.answer_coords]
    expect = vals[ans].mean() - vals[list(out.selection.kept_indices)].mean()
    assert got == pytest.approx(expect, abs=1e-12)


def test_lr_schedule_warmup_then_linear_decay():
    cfg = tr.TrainConfig(learning_rate=1.0, warmup_ratio=0.1, num_steps=100)
    assert tr.lr_at(1, cfg) == pytest.approx(0.1)
    assert tr.lr_at(10, cfg) == pytest.approx(1.0)
    assert tr.lr_at(55, cfg) == pytest.approx(0.5)
    assert tr.lr_at(100, cfg) == pytest.approx(0.0)


def test_train_smoke_loss_decreases():
    data = lookup_data(n=24, seed=4)
    model = tiny_model(data, tr.DoTConfig(pre_limit=48, k=10))
    result = tr.train(model.config,
                      tr.TrainConfig(num_steps=60, batch_size=2, learning_rate=3e-3,
                                     seed=1, precision="f64"),
                      data, model=model)
    losses = [m["loss"] for m in result.metrics]
    first, last = np.mean(losses[:20]), np.mean(losses[-20:])
    assert last < first
    assert result.npe_s > 0


def test_exploration_noise_rotates_selection_but_not_bias():
    data = lookup_data()
    model = tiny_model(data)
    ex = data[0]
    rng = np.random.default_rng(0)
    base = tr.dot_forward(model, ex)
    noisy = tr.dot_forward(model, ex, selection_noise=(5.0, rng))
    # scores and bias values are untouched by the noise
    np.testing.assert_array_equal(base.scores.values, noisy.scores.values)
    # with a large sigma the kept set should differ from the clean ranking
    diffs = [tr.dot_forward(model, ex,
                            selection_noise=(5.0, np.random.default_rng(s))
                            ).selection.kept_indices
             for s in range(6)]
    assert len({d for d in diffs}) > 1


def test_exploration_training_is_still_deterministic():
    data = lookup_data(n=10, seed=12)

    def run():
        model = tiny_model(data, seed=5)
        res = tr.train(model.config,
                       tr.TrainConfig(num_steps=6, batch_size=2, seed=2,
                                      precision="f64", exploration_noise=1.5),
                       data, model=model)
        return [(m["loss"], m["answer_pruned"]) for m in res.metrics]

    assert run() == run()


def test_train_same_seed_bit_identical_metrics():
    data = lookup_data(n=12, seed=5)

    def run():
        model = tiny_model(data, seed=7)
        res = tr.train(model.config,
                       tr.TrainConfig(num_steps=8, batch_size=2, seed=3,
                                      precision="f64"),
                       data, model=model)
        return [(m["step"], m["loss"], m["lr"], m["answer_score_gap"], m["answer_pruned"])
                for m in res.metrics]

    assert run() == run()


def test_train_divergence_aborts_with_diagnostic():
    data = lookup_data(n=4, seed=6)
    model = tiny_model(data)
    model.task.head_w.data[0, 0] = np.nan
    with pytest.raises(TrainingDivergedError, match="step 1"):
        tr.train(model.config, tr.TrainConfig(num_steps=3, batch_size=1),
                 data, model=model)


def test_train_rejects_empty_dataset():
    with pytest.raises(ContractError):
        tr.train(tr.DoTConfig(), tr.TrainConfig(), [])


def test_oracle_scores_match_plain_task_model_on_answer_rows():
    data = lookup_data(n=6, seed=8)
    cfg = tr.DoTConfig(pre_limit=48, k=24)
    model = tiny_model(data, cfg)
    from dotprune.tables import linearize
    for ex in data:
        out = tr.dot_forward(
            model, ex, scores_override=lambda s: pr.oracle_scores(s, ex.answer_coords))
        # plain task model fed exactly question + answer-row tokens
        pre = tr.preselect(linearize(ex, model.vocab), ex, cfg)
        answer_rows = {r for r, _ in ex.answer_coords}
        kept = [i for i in range(len(pre))
                if pre.segment_ids[i] == 0 or (pre.row_ids[i] - 1) in answer_rows]
        manual = pre.subsequence(kept, keep_positions=True)
        with T.no_grad():
            hidden, _ = enc.forward(model.task.encoder, manual)
            plain = T.add(T.matmul(hidden, model.task.head_w), model.task.head_b)
        if len(out.compact_seq) == len(manual):
            np.testing.assert_allclose(out.token_logits.data,
                                       plain.data.ravel(), atol=1e-9)


def test_checkpoint_round_trip_preserves_outputs(tmp_path):
    data = lookup_data(n=4, seed=9)
    model = tiny_model(data)
    path = tmp_path / "model.ckpt"
    tr.save_checkpoint(path, model)
    loaded = tr.load_checkpoint(path)
    ex = data[0]
    with T.no_grad():
        a = tr.dot_forward(model, ex)
        b = tr.dot_forward(loaded, ex)
    np.testing.assert_array_equal(a.token_logits.data, b.token_logits.data)
    assert a.selection.kept_indices == b.selection.kept_indices


def test_evaluate_reports_rates():
    data = lookup_data(n=6, seed=10)
    model = tiny_model(data)
    report = tr.evaluate(model, data)
    assert 0.0 <= report.accuracy <= 1.0
    assert report.n_examples == 6
    assert 0.0 <= report.answer_pruned_rate <= 1.0
    assert len(report.correct_flags) == 6


def test_evaluate_with_oracle_scores_is_perfect_when_task_sees_answers():
    # Oracle keeps the answer row; with forced-perfect task logits the
    # prediction must match the gold cell on every example.
    data = lookup_data(n=5, seed=11)
    cfg = tr.DoTConfig(pre_limit=48, k=24)
    model = tiny_model(data, cfg)
    for ex in data:
        out = tr.dot_forward(
            model, ex, scores_override=lambda s: pr.oracle_scores(s, ex.answer_coords))
        assert not out.answer_pruned
        forced = np.zeros(len(out.compact_seq))
        for j in out.kept_table_slots:
            forced[j] = 30.0 if out.compact_seq.origin[j] in ex.answer_coords else -30.0
        out.token_logits = T.Tensor(forced)
        assert tr.predict_cells(out) == ex.answer_coords
