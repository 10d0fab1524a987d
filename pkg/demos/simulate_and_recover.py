"""Simulate a click log with known parameters and fit the cascade model with satisfaction back.

Run with ``python3 demos/simulate_and_recover.py``; it takes well under a minute.
"""

import numpy as np

from gcmclick import SimulationConfig, build_czm, fit, recovery_error, simulate

# 10k users give roughly 20k sessions, since every user has two sessions on average
config = SimulationConfig(users=10000, seed=0)
log, truth = simulate(config)
print(f"{log.n_sessions} sessions over {log.n_items} items, {log.list_size} results each")
print(f"click rate by rank: {np.round(log.clicks.mean(axis=0), 3)}")

model = build_czm(n_items=log.n_items, list_size=log.list_size)
fitted = fit(model, log, callback=lambda info: print(f"  iter {info.iteration:3d}  loglik {info.loglik:.3f}  change {info.delta:.2e}"))
rep = fitted.report
print(f"converged={rep.converged} after {rep.iterations} iterations, final loglik {rep.final_loglik:.3f}")

print(f"continuation: fitted {fitted.probabilities('continuation')[0]:.4f}, true {truth.continuation}")
rec = recovery_error(fitted, truth, min_impressions=100)
for name, s in rec.summary().items():
    print(f"{name:>13}: mean abs error {s['mean']:.4f}, max {s['max']:.4f} over {s['n']} values")

# attraction is estimated per item; the truth is the impression-weighted average over users
order = np.argsort(truth.item_attraction)[::10]
est = fitted.probabilities("attraction")
idx = [fitted.item_ids.index(v) for v in truth.item_ids[order]]
for v, i in zip(order, idx):
    print(f"  item{v:<3d} impressions {truth.impressions[v]:5d}  true {truth.item_attraction[v]:.3f}  fitted {est[i]:.3f}")
