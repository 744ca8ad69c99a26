"""Simulate one screening cohort, fit the two-lag cure model and look at the result.

Run with ``python demos/simulate_and_fit.py``; it takes about a minute.
"""
import numpy as np

from multicure.diagnostics import convergence_report, summarize, survival_grids
from multicure.likelihood import ModelConfig
from multicure.sampler import ChainConfig, PriorConfig, run_chains
from multicure.simulator import generate_dataset, paper_scenario, pattern_summary, true_values

# LT2: slow single lag, fast pairs; a third of the cohort in each screening-count class
scenario = paper_scenario("LT2", "NLS1", n_subjects=400)
records, truth = generate_dataset(scenario, seed=1)
print("censoring and observed counts:", pattern_summary(records, scenario.timeline))
print("truth:", {k: round(v, 3) for k, v in true_values(scenario).items()})

model = ModelConfig(ell=2, timeline=scenario.timeline)
chains = run_chains(records, model, PriorConfig(), ChainConfig(iterations=3000, burn_in=1000, n_chains=2, seed=3))

summary = summarize(chains)
for name in ("theta_0", "theta_1", "theta_2", "lambda_1_1", "lambda_2_1", "lambda_2_2", "alpha"):
    med, lo, hi = summary.row(name)
    print(f"{name:>11}: {med:.3f}  [{lo:.3f}, {hi:.3f}]")

report = convergence_report(chains)
worst = max((v["rhat"], k) for k, v in report.items() if "rhat" in v)
print("largest R-hat: %.3f (%s)" % worst)
print("acceptance rates:", {k: round(v, 2) for k, v in chains[0].acceptance_rates.items()})

# first marginal curve: the single-lag law, pointwise posterior median
grids = survival_grids(chains, model.ell, model.timeline)
marg = next(g for g in grids if g.kind == "marginal")
print("marginal survival grid:", marg.label, np.round(marg.values[:6], 3))
