"""Train the overparameterized form vs the condensed form directly, on the toy task.

The overparameterized run is reparameterized after training; both end up
with the same inference architecture.

    python3 scripts/toy_ablation.py --seeds 0 1 2 --steps 200
"""

import argparse

import numpy as np

from ffnrep.model import predict
from ffnrep.training import ToyTask, freeze_then_verify, toy_config, train_toy


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="*", default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--lr", type=float, default=0.1)
    ap.add_argument("--theta", type=float, default=0.75)
    args = ap.parse_args()

    print(f"{'seed':>4} {'form':<11} {'loss0':>7} {'lossT':>7} {'train acc':>9} {'test acc':>8} {'reparam diff':>12}")
    for seed in args.seeds:
        task = ToyTask(seed=seed)
        test_x, test_y = ToyTask(seed=seed, sample_seed=1).generate(np.float32)
        for form in ("idle-train", "idle-infer"):
            s = train_toy(toy_config(args.theta, seed=seed, task=task), task, args.steps, args.lr, train_form=form)
            model, diff = s.model, float("nan")
            if form == "idle-train":
                check = freeze_then_verify(model, test_x[:200])
                model, diff = check["model"], check["max_rel_diff"]
            acc = float(np.mean(predict(model, test_x).argmax(axis=1) == test_y))
            print(
                f"{seed:>4} {form:<11} {s.loss_curve[0]:>7.3f} {s.loss_curve[-1]:>7.3f} "
                f"{s.final_accuracy:>9.3f} {acc:>8.3f} {diff:>12.1e}"
            )


if __name__ == "__main__":
    main()
