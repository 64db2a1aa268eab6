"""Fitted eta and beta against the generating values as more snapshots are used.

Column T fits the first T snapshots A(0..T-1).
"""

import argparse
import json
import warnings

from dynrecip.em import DegenerateFitWarning, fit
from dynrecip.generator import GeneratorConfig, generate
from dynrecip.model import Hyperparams


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--nodes", type=int, default=500)
    p.add_argument("--avg-degree", type=float, default=20.0)
    p.add_argument("--K", type=int, default=3)
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.2)
    p.add_argument("--T", type=int, default=6)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--out", help="write a JSON table here")
    args = p.parse_args(argv)

    rows = []
    print("seed  T  eta_hat   beta_hat")
    for seed in args.seeds:
        net, _ = generate(GeneratorConfig(n_nodes=args.nodes, K=args.K,
                                          avg_degree=args.avg_degree, eta=args.eta,
                                          beta=args.beta, T=args.T, seed=seed))
        for T in range(1, args.T + 1):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateFitWarning)
                params = fit(net.truncated(T), Hyperparams(K=args.K, seed=seed)).params
            rows.append({"seed": seed, "T": T, "eta": params.eta, "beta": params.beta})
            print(f"{seed:4d} {T:2d}  {params.eta:.5f}  {params.beta:.5f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
