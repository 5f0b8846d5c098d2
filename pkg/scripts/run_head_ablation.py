#!/usr/bin/env python3
"""Compare inheriting vs re-initializing the projection head before training.

Both arms share one synthetic task and differ only in how the feedback
encoder's head starts: copied from the frozen base encoder, or drawn fresh.
Reports the step-0 retrieval identity check and final eval MRR@10 per arm.
"""

import argparse

from denseprf.synth import ExperimentConfig, head_ablation


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    args = parser.parse_args()

    inherit, reinit = head_ablation(ExperimentConfig().with_seed(args.seed))
    for arm in (inherit, reinit):
        losses = arm.epoch_losses
        trajectory = " ".join(f"{losses[e]:.4f}" for e in sorted(losses))
        print(f"{arm.head_policy.name.lower():>7}:"
              f" step-0 ranking matches base encoder: {arm.step0_matches_base};"
              f" final MRR@10 {arm.final_mrr:.4f}")
        print(f"         epoch mean loss: {trajectory}")
    gap = inherit.final_mrr - reinit.final_mrr
    print(f"inherit - reinit MRR@10 gap: {gap:+.4f}")


if __name__ == "__main__":
    main()
