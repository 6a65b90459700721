"""Write a synthetic pair dataset, its context corpus and a matching run config.

    python3 scripts/make_synthetic.py data/synthetic --pairs 200 --seed 0
"""

import argparse
from pathlib import Path

from ctxmatch.synthetic import experiment_config, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--pairs", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config", type=Path, help="where to write the run config (default: <out_dir>/config.json)")
    ap.add_argument("--run-dir", default=None, help="output_dir recorded in the config")
    args = ap.parse_args()

    data = generate(args.pairs, args.seed)
    paths = data.write(args.out_dir)
    cfg = experiment_config(paths, args.run_dir or str(args.out_dir / "run"))
    cfg.save(args.config or args.out_dir / "config.json")
    n_pos = sum(p.label for p in data.train)
    print(f"{len(data.train)} train pairs ({n_pos} positive), {len(data.test)} test pairs, "
          f"{len(data.corpus)} corpus lines -> {args.out_dir}")


if __name__ == "__main__":
    main()
