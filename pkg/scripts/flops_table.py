#!/usr/bin/env python3
"""Print the analytic compute table for the named presets and variants."""

import argparse

from regionmae.config import ModelConfig, preset
from regionmae.flops import flops_estimate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", nargs="*",
                    default=["vit-b-mae", "vit-b-rmae", "vit-b-rae"])
    ap.add_argument("--variants", action="store_true",
                    help="also sweep region variants over k at the joint preset")
    args = ap.parse_args()

    for name in args.preset:
        report = flops_estimate(preset(name))
        print(f"== {name} ==")
        print(report.to_table())
        print()

    if args.variants:
        base = preset("vit-b-rmae")
        print("== region-branch counts by variant and k ==")
        header = "k".rjust(4) + "".join(v.rjust(14) for v in ("channel", "batch", "length"))
        print(header)
        for k in (1, 2, 4, 8, 16):
            row = f"{k:4d}"
            for variant in ("channel", "batch", "length"):
                cfg = ModelConfig(**{**base.__dict__, "variant": variant, "k": k})
                row += f"{flops_estimate(cfg).region_branch_total / 1e6:12.1f}M "
            print(row)


if __name__ == "__main__":
    main()
