"""Run the desk experiment (three seeds) and print the headline numbers.

    python3 scripts/run_desk_experiment.py [--config configs/desk.json] [--out out/desk] [--seeds 0 1 2]
"""

import argparse
import sys
from pathlib import Path

from dualstream.experiment import run_desk_experiment

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(ROOT / "configs" / "desk.json"))
    p.add_argument("--out", default=None, help="output root (default: the config's out_dir)")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("-q", "--quiet", action="store_true")
    args = p.parse_args(argv)
    progress = None if args.quiet else (lambda line: print(line, file=sys.stderr, flush=True))
    res = run_desk_experiment(args.config, args.seeds, args.out, progress)
    mean = res.mean_balanced_accuracy()
    print(f"{len(res.seeds)} seeds in {res.seconds / 60:.1f} min")
    print("mean test balanced accuracy: " + ", ".join(f"{c} {v:.4f}" for c, v in mean.items()))
    print("dual-stream gain: " + ", ".join(f"{k} {v:+.4f}" for k, v in res.improvements().items()))
    for s in res.seeds:
        print(f"seed {s.seed}: " + ", ".join(
            f"{t} val acc {m['val_accuracy']:.4f} ({m['seconds']:.0f} s)" for t, m in s.pretext.items()))
    return 0


if __name__ == "__main__":
    sys.exit(main())
