"""Upper bounds on frequency-similarity pretext accuracy under the triplet head.

The head only sees ``|e0 - e1|`` and ``|e1 - e2|``, while the label compares
d(x0, x1) with d(x0, x2). Two bounds on held-out recordings:

* stage lookup: the label rate of each (stage0, stage1, stage2) triple in the
  training recordings, the best any stage-level embedding can do;
* stage table: a free 100-d vector per stage trained through the real head.

    python3 scripts/fs_head_ceiling.py [--recordings 20] [--examples 1000]
"""

import argparse
from collections import defaultdict

import numpy as np

from dualstream import autodiff as ad
from dualstream.io import SynthSpec, generate_synthetic
from dualstream.model import ContrastiveHead
from dualstream.prep import PrepConfig, preprocess
from dualstream.samplers import SamplerConfig, sample_task


def collect(n_recordings: int, examples: int, seed: int):
    recs = generate_synthetic(SynthSpec(n_recordings=n_recordings, seed=seed))
    stages, labels, groups = [], [], []
    for gi, rec in enumerate(recs):
        wins = preprocess(rec, PrepConfig())
        stage_of = {w.key: int(w.stage) for w in wins}
        for ex in sample_task("fs", wins, SamplerConfig.for_task("fs", examples_per_recording=examples, seed=seed)):
            stages.append([stage_of[k] for k in ex.refs])
            labels.append(ex.label)
            groups.append(gi)
    return np.array(stages), np.array(labels, dtype=np.float64), np.array(groups)


def stage_lookup(stages, labels, train):
    table = defaultdict(list)
    for s, y in zip(map(tuple, stages[train]), labels[train]):
        table[s].append(y)
    pred = np.array([np.mean(table.get(tuple(s), [0.5])) > 0.5 for s in stages[~train]])
    return float(np.mean(pred == (labels[~train] == 1)))


def stage_table(stages, labels, train, steps: int = 1500, dim: int = 100, seed: int = 0):
    rng = np.random.default_rng(seed)
    table = ad.Tensor(rng.standard_normal((5, dim)) * 0.1, requires_grad=True)
    head = ContrastiveHead("fs", dim, dropout_p=0.0, seed=seed)
    params = [table] + head.parameters()
    opt = ad.OptimizerState(alpha=1e-2)
    tr = np.flatnonzero(train)

    def logits(idx):
        return head([ad.take_rows(table, stages[idx, k]) for k in range(3)])

    for _ in range(steps):
        loss = ad.bce_with_logits(logits(tr), labels[tr])
        for p in params:
            p.zero_grad()
        loss.backward()
        ad.adam_step([p.values for p in params], [p.grad for p in params], opt)
    te = np.flatnonzero(~train)
    return float(np.mean((logits(te).values > 0) == (labels[te] == 1)))


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--recordings", type=int, default=20)
    p.add_argument("--examples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    stages, labels, groups = collect(args.recordings, args.examples, args.seed)
    train = groups < int(0.7 * args.recordings)
    print(f"{len(labels)} triplets from {args.recordings} recordings, positive rate {labels.mean():.3f}")
    print(f"stage lookup bound:       {stage_lookup(stages, labels, train):.4f}")
    print(f"stage table through head: {stage_table(stages, labels, train, seed=args.seed):.4f}")


if __name__ == "__main__":
    main()
