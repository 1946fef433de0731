# coding: utf-8

# # Fitting a spatial logistic model to a synthetic cohort
#
# We build a small grid of tracts, draw a cohort from a known model and
# check how well the sampler gets the coefficients back.

import numpy as np

from tractrisk import (McmcConfig, ModelSpec, RandomStream, assemble_design, fit,
                       grid_graph, simulate_cohort, summarize_coefficients)
from tractrisk.inference import diagnostics

# A 6 x 4 rook grid.  `centroids` gives each tract a point, which the
# simulator uses to scatter addresses.

graph, centroids = grid_graph(6, 4)
print(graph.n, "tracts,", len(graph.edges), "edges")

# The truth: a rare outcome, three covariates that matter and strong
# spatial smoothing of the tract effects.

truth = {"alpha0": -3.5, "beta": {"age": 0.04, "black": 0.6, "poverty": 1.2},
         "tau_alpha": 0.6, "rho": 0.8}
cohort, sim = simulate_cohort(graph, truth, 120, RandomStream(1, 0), centroids=centroids)
print(cohort.N, "deliveries, event rate", round(cohort.outcome.mean(), 3))

# Design matrix restricted to the true covariates plus one that is not
# in the model (hispanic).  Continuous columns get standardized.

design = assemble_design(cohort, columns=["age", "black", "hispanic", "poverty"])

# Two short chains are enough here.

samples = fit(ModelSpec("CAR"), McmcConfig(1500, 500, 2, 2, seed=1), cohort, design, graph)
print(samples.n_draws, "retained draws")

for s in summarize_coefficients(samples, design.standardization):
    true = truth["beta"].get(s.name, 0.0)
    print(f"{s.name:10s} true {true:+.3f}  mean {s.mean_log_or:+.3f}  "
          f"95% CI [{s.ci_low:+.3f}, {s.ci_high:+.3f}]  Bayes p {s.bayes_p:.3f}")

# Mixing and fit criteria in one go.

rep = diagnostics(samples, cohort=cohort, design=design)
for name, ess in zip(rep.params, rep.ess):
    print(f"ESS {name:20s} {ess:7.1f}")
print("DIC", round(rep.dic, 1), "WAIC", round(rep.waic, 1))

# The estimated tract effects should track the simulated ones.

alpha_hat = samples["alpha"].mean(axis=0)
print("corr(alpha_hat, alpha_true) =", round(np.corrcoef(alpha_hat, sim.alpha)[0, 1], 3))
