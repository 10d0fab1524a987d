"""Fit the cascade model with satisfaction and the user browsing model to the same log.

The data come from the cascade model, so on held-out sessions it should
predict clicks a little better than the browsing model, and both should beat
the coin-flip predictor with perplexity 2.  The per-rank curves are written
to ``czm_vs_ubm.tsv`` (rank, perplexity, model) for plotting.

The UBM fit is the slow part: about two minutes on one core.
"""

import sys

import numpy as np

from gcmclick import SimulationConfig, build_czm, build_ubm, fit, perplexity, simulate

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
log, _ = simulate(SimulationConfig(users=10000, seed=seed))

rng = np.random.default_rng(seed)
perm = rng.permutation(log.n_sessions)
cut = int(0.8 * log.n_sessions)
train, test = log.subset(np.sort(perm[:cut])), log.subset(np.sort(perm[cut:]))
print(f"train {train.n_sessions} sessions, test {test.n_sessions} sessions")

reports = []
for model in (build_czm(log.n_items, log.list_size), build_ubm(log.list_size, log.n_items)):
    fitted = fit(model, train)
    rep = perplexity(fitted, test)
    reports.append(rep)
    print(f"{model.name}: {fitted.report.iterations} iterations, overall perplexity {rep.overall:.5f}")

print("rank  " + "  ".join(f"{r.model_name:>8}" for r in reports))
for t in range(log.list_size):
    print(f"{t + 1:4d}  " + "  ".join(f"{r.per_rank[t]:8.5f}" for r in reports))

with open("czm_vs_ubm.tsv", "w") as fh:
    for r in reports:
        fh.write(r.plot_rows())
print("per-rank series written to czm_vs_ubm.tsv")
