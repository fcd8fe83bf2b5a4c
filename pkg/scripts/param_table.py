"""Parameter counts of the CDN variants and search-space cardinalities."""

from nasfas.cdn import VARIANTS, build_cdn
from nasfas.nn import param_count
from nasfas.search_spaces import baseline_space, fas_space, space_size


def main():
    print(f"{'network':<12}{'input':>7}{'params':>12}")
    for v in VARIANTS:
        print(f"{v:<12}{256:>7}{param_count(build_cdn(variant=v, input_size=256)):>12,}")
    print()
    for name, sp in (("baseline", baseline_space()), ("fas", fas_space())):
        n = space_size(sp)
        print(f"{name:<12}{n:>40,}  ({len(sp.ops)} ops per edge)")


if __name__ == "__main__":
    main()
