"""Search on the desk protocol, retrain the genotypes and compare them with random ones.

Each seed runs one search over the three source domains followed by a retrain; the
same number of randomly sampled genotypes is retrained for reference. Cached under
results/ keyed by the protocol and the package sources.
"""

import argparse

from nasfas.experiments import DeskProtocol, cached, end_to_end


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scheme", default="dt-meta", choices=["nas", "dt-nas", "dt-meta"])
    ap.add_argument("--results", default="results")
    ap.add_argument("--seeds", default="0,1,2")
    args = ap.parse_args()
    protocol = DeskProtocol(seeds=tuple(int(s) for s in args.seeds.split(",")))
    res = cached(protocol, f"e2e-{args.scheme}", lambda: end_to_end(protocol, args.scheme), args.results)
    for row in res["searched"]:
        print(f"searched seed {row['seed']}  ACER {row['acer']:.4f}  search {row['search_seconds']:.0f}s")
    for row in res["random"]:
        print(f"random   #{row['index']}     ACER {row['acer']:.4f}")
    print(f"mean ACER searched {res['acer_searched']:.4f}  random {res['acer_random']:.4f}  RI {res['ri']:.1f}%")


if __name__ == "__main__":
    main()
