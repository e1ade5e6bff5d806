#!/usr/bin/env python3
"""Paired manual-vs-assisted comparison with a jittery operator.

Eight generated scenes, each flown twice by the same noisy proportional
operator (identical jitter stream per pair), once raw and once through the
arbitrating controller.  Prints the per-scene pairs and the aggregate that
the batch CLI would put in summary.json.
"""

from graspassist import ExperimentConfig, SyntheticOperator, run_experiment

cfg = ExperimentConfig(
    n_trials=8,
    operator=SyntheticOperator(kind="noisy-proportional", noise_std=12.0,
                               seed=5),
    seed=2024,
)
summary = run_experiment(cfg)

print("scene   manual err / time      assisted err / time")
pairs = zip(summary["modes"]["manual"]["trials"],
            summary["modes"]["assisted"]["trials"])
for m, a in pairs:
    flag = "" if a["position_error"] <= m["position_error"] else "   <- manual won"
    print(f"  {m['trial']:3d}   {m['position_error']:6.2f} / {m['execution_time']:5.2f}s"
          f"      {a['position_error']:6.2f} / {a['execution_time']:5.2f}s{flag}")

print(f"\nfeasible scenes: {summary['feasible']}/{summary['n_trials']}")
for mode in ("manual", "assisted"):
    st = summary["modes"][mode]
    print(f"{mode:>9}: {st['successes']}/{st['n']} ok, "
          f"mean error {st['position_error']['mean']:.3f} mm, "
          f"mean time {st['execution_time']['mean']:.2f} s")
