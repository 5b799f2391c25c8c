"""Parameter and MAC counts for every preset: vanilla, train form, condensed form.

    python3 scripts/count_presets.py [--theta 0.75] [--mode linear-only]
"""

import argparse

from ffnrep.accounting import account
from ffnrep.config import PRESETS, preset_config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--theta", type=float, nargs="*", default=[0.5, 0.75])
    ap.add_argument("--mode", choices=("linear-only", "full"), default="linear-only")
    args = ap.parse_args()

    print("| preset | theta | vanilla M | train-form M | condensed M | vanilla GMACs | condensed GMACs | params cut |")
    print("|---|---|---|---|---|---|---|---|")
    for name in PRESETS:
        van = account(preset_config(name, ffn_form="vanilla-ln"), mode=args.mode).totals
        for theta in args.theta:
            tr = account(preset_config(name, ffn_form="idle-train", idle_ratio=theta), mode=args.mode).totals
            inf = account(preset_config(name, ffn_form="idle-infer", idle_ratio=theta), mode=args.mode).totals
            cut = 100 * (inf["params"] / van["params"] - 1)
            print(
                f"| {name} | {theta} | {van['params'] / 1e6:.1f} | {tr['params'] / 1e6:.1f} | {inf['params'] / 1e6:.1f} "
                f"| {van['macs'] / 1e9:.2f} | {inf['macs'] / 1e9:.2f} | {cut:+.1f}% |"
            )


if __name__ == "__main__":
    main()
