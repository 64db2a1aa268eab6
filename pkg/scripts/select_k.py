"""Cross-validated K selection on planted networks.

For each seed, sweeps K and reports which K has the highest mean held-out AUC.
"""

import argparse
import collections

from dynrecip.evaluation import select_K
from dynrecip.generator import GeneratorConfig, generate
from dynrecip.model import Hyperparams


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--nodes", type=int, default=500)
    p.add_argument("--avg-degree", type=float, default=5.0)
    p.add_argument("--K", type=int, default=3, help="planted K")
    p.add_argument("--sweep", type=int, nargs="+", default=[2, 3, 4, 5])
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--restarts", type=int, default=5)
    args = p.parse_args(argv)

    picks = collections.Counter()
    for seed in range(args.seeds):
        net, _ = generate(GeneratorConfig(n_nodes=args.nodes, K=args.K,
                                          avg_degree=args.avg_degree, seed=seed))
        best, scores = select_K(net, args.sweep, Hyperparams(K=args.K, n_restarts=args.restarts,
                                                             seed=seed),
                                n_folds=args.folds, seed=seed)
        picks[best] += 1
        print(f"seed {seed}: best K={best}  " +
              "  ".join(f"K={k}:{v:.4f}" for k, v in scores.items()), flush=True)
    print("picked:", dict(sorted(picks.items())))


if __name__ == "__main__":
    main()
