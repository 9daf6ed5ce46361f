"""How the budget is split and what each release costs.

Run: python3 demos/privacy_accounting.py [--epsilon 1] [--delta 1e-5]
"""

import argparse

from cfsynth.auxinfo import pairwise_sensitivity
from cfsynth.cfembed import cf_sensitivity
from cfsynth.privacy import DpBudget, RdpLedger, calibrate_classic, split_budget, to_eps_delta


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--epsilon", type=float, default=1.0)
    parser.add_argument("--delta", type=float, default=1e-5)
    parser.add_argument("--n", type=int, default=10_000, help="dataset size")
    parser.add_argument("--d", type=int, default=2, help="encoded width")
    parser.add_argument("--k", type=int, default=500, help="number of frequencies")
    args = parser.parse_args()

    print(f"one Gaussian release at ({args.epsilon}, {args.delta}): "
          f"noise multiplier {calibrate_classic(args.epsilon, args.delta):.4f}")

    plan = split_budget(DpBudget(args.epsilon, args.delta, 0.5))
    ledger = RdpLedger()
    s_aux, s_cf = pairwise_sensitivity(args.d, args.n), cf_sensitivity(args.k, args.n)
    ledger.charge_gaussian(s_aux, plan.sigma_aux * s_aux, "mean pairwise distance")
    ledger.charge_gaussian(s_cf, plan.sigma_cf * s_cf, "CF embedding")
    print(f"split: CF multiplier {plan.sigma_cf:.4f}, aux multiplier {plan.sigma_aux:.4f}")
    print(f"  pairwise-distance noise std {plan.sigma_aux * s_aux:.3g} (sensitivity {s_aux:.3g})")
    print(f"  embedding noise std per coordinate {plan.sigma_cf * s_cf:.3g} (sensitivity {s_cf:.3g})")

    for conversion in ("improved", "standard"):
        print(f"composed epsilon ({conversion} conversion): {to_eps_delta(ledger, args.delta, conversion):.4f}")

    ledger_text = ledger.dumps(args.delta)
    print("training reads the release, never the data, so the ledger stays as is:")
    print(ledger_text)


if __name__ == "__main__":
    main()
