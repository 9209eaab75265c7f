"""Training-throughput ladder: pruned two-tower vs single towers.

Measures examples/second over real optimization steps for three models on
the same data: DoT(mini -> k -> small), small-only at the full input
length, and a twice-as-wide task-only model. The two-tower setup should
win because the expensive tower only ever sees k tokens.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from dotprune import encoder as enc, synth, training as tr
from dotprune.tables import Vocabulary


def wide_config(vocab_size, max_input, seed):
    base = enc.preset("small", vocab_size=vocab_size, max_input=max_input, seed=seed)
    return enc.EncoderConfig(num_layers=base.num_layers, hidden=2 * base.hidden,
                             num_heads=2 * base.num_heads,
                             intermediate=2 * base.intermediate,
                             vocab_size=vocab_size, max_input=max_input, seed=seed)


def measure(name, dot_cfg, data, vocab, steps, seed, task_config=None,
            baseline=False):
    from dotprune import pruning as pr

    model = tr.build_model(dot_cfg, vocab, dtype=np.float32, seed=seed,
                           task_config=task_config)
    override = (lambda s: pr.constant_scores(s, 0.0)) if baseline else None
    result = tr.train(dot_cfg, tr.TrainConfig(learning_rate=1e-4, num_steps=steps,
                                              batch_size=1, seed=seed,
                                              precision="f32"),
                      data, model=model, scores_override=override)
    print(f"{name:32s} NPE/s {result.npe_s:8.2f}")
    return result.npe_s


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--pre-limit", type=int, default=128)
    ap.add_argument("--k", type=int, default=24)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = synth.GeneratorSpec(seed=77, n_examples=256, min_rows=13, max_rows=15,
                               min_cols=4, max_cols=4, min_cell_tokens=2,
                               max_cell_tokens=2, vocab_size=50)
    data = synth.generate(spec)
    vocab = Vocabulary.from_examples(data)

    dot = tr.DoTConfig(pruning_preset="mini", task_preset="small",
                       pre_limit=args.pre_limit, k=args.k)
    # single towers: scorer bypassed, all tokens kept, task tower alone trains
    keep_all = tr.DoTConfig(pruning_preset="mini", task_preset="small",
                            pre_limit=args.pre_limit, k=args.pre_limit)

    npe_dot = measure(f"DoT(mini->{args.k}->small)", dot, data, vocab,
                      args.steps, args.seed)
    npe_small = measure(f"small-only @ {args.pre_limit}", keep_all, data, vocab,
                        args.steps, args.seed, baseline=True)
    npe_wide = measure(f"2x-wide-only @ {args.pre_limit}", keep_all, data, vocab,
                       args.steps, args.seed, baseline=True,
                       task_config=wide_config(len(vocab), args.pre_limit,
                                               args.seed + 1))
    print("ordering ok:", npe_dot > npe_small > npe_wide)


if __name__ == "__main__":
    main()
