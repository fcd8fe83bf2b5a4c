"""Leave-one-domain-out comparison of CDN_CDC against DepthNet on the desk protocol.

Results are cached under results/ keyed by the protocol and the package sources.
"""

import argparse

from nasfas.experiments import DeskProtocol, cached, cdn_comparison


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--results", default="results")
    ap.add_argument("--seeds", default="0,1,2")
    args = ap.parse_args()
    protocol = DeskProtocol(seeds=tuple(int(s) for s in args.seeds.split(",")))
    res = cached(protocol, "cdn-comparison", lambda: cdn_comparison(protocol), args.results)
    for row in res["rows"]:
        print(f"{row['variant']:<10} seed {row['seed']}  ACER {row['acer']:.4f}  AUC {row['auc']:.4f}")
    for v, m in res["mean_acer"].items():
        print(f"mean ACER {v:<10} {m:.4f}")


if __name__ == "__main__":
    main()
