"""Swap a per-item table for a logistic function of item features.

The simulator places items in the unit square and users are drawn to nearby
items, so items near the centre attract more users on average.  Instead of
one attraction value per item we let attraction be logistic in
``(x, y, x^2, y^2)`` of the item location: five weights instead of a
hundred.  The satisfaction and continuation parameters stay as they are.
"""

import numpy as np

from gcmclick import SimulationConfig, build_czm, fit, parameter_sharing, perplexity, simulate

log, truth = simulate(SimulationConfig(users=5000, seed=3))
loc = truth.item_locations
# rows follow the log's item vocabulary
rows = [int(v[len("item"):]) for v in log.item_ids]
features = np.column_stack([loc[rows], loc[rows] ** 2])

table_model = build_czm(log.n_items, log.list_size)
feature_model = parameter_sharing(table_model, {"attraction": ("location", features)})
print(feature_model.parameters["attraction"].activation)

half = log.n_sessions // 2
train, test = log.subset(range(half)), log.subset(range(half, log.n_sessions))
for model in (table_model, feature_model):
    fitted = fit(model, train)
    rep = perplexity(fitted, test)
    n_weights = sum(s.activation.n_weights() for s in model.parameters.values())
    print(f"{n_weights:4d} weights: held-out perplexity {rep.overall:.5f} after {fitted.report.iterations} iterations")

w = fitted.params["attraction"]
print("logistic weights (x, y, x^2, y^2, bias):", np.round(w, 3))
# a bowl opening downwards means attraction peaks inside the square
centre = -w[:2] / (2 * w[2:4])
print("implied attraction peak at", np.round(centre, 3))

# the same model written out in the text format accepted by `gcmclick fit --model`
text = feature_model.to_text()
line = next(l for l in text.splitlines() if l.startswith("param attraction"))
print(line[:100] + " ...")
