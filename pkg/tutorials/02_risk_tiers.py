# coding: utf-8

# # From posterior draws to neighbourhood risk tiers
#
# Every retained draw gives a risk for every delivery.  Averaging those
# within a tract gives a posterior for the tract's risk, and a 1-D k-means
# on the posterior means sorts tracts into lower, moderate and higher tiers.

from tractrisk import (McmcConfig, ModelSpec, RandomStream, assemble_design, fit,
                       grid_graph, simulate_cohort)
from tractrisk.risk import (cluster_covariate_analysis, cluster_risk_posteriors,
                            kmeans_stratify, neighborhood_risks, pairwise_comparison,
                            patient_risk_matrix)

graph, centroids = grid_graph(5, 5)
truth = {"alpha0": -3.0, "beta": {"poverty": 1.5, "violent_crime": 0.5},
         "tau_alpha": 0.8, "rho": 0.9}
cohort, _ = simulate_cohort(graph, truth, 100, RandomStream(2, 0), centroids=centroids)
design = assemble_design(cohort, columns=["age", "poverty", "violent_crime"])
samples = fit(ModelSpec(), McmcConfig(1200, 200, 2, 2, seed=2), cohort, design, graph)

# (draws x deliveries) log-odds, then per-tract risk posteriors.

theta = patient_risk_matrix(samples, design)
hoods, skipped = neighborhood_risks(theta, cohort)
print(theta.shape, len(hoods), "tracts with records")

# Tiers.  Restarts guard against poor local optima; in one dimension the
# best of 50 is essentially always the global optimum.

tiers = kmeans_stratify([h.p_mean for h in hoods], RandomStream(2, 1),
                        tract_ids=[h.tract_id for h in hoods])
clusters = cluster_risk_posteriors(hoods, tiers)
for c in clusters:
    print(f"{c.tier:9s} {len(c.members):2d} tracts  risk {c.p_mean:.3f} "
          f"[{c.ci_low:.3f}, {c.ci_high:.3f}]")

# Do the tiers line up with the tract covariates?

contrasts = cluster_covariate_analysis(cohort.tract_covariate_means(), tiers, clusters)
for name in ("poverty", "violent_crime", "proportion_black"):
    r = contrasts[name]
    print(name, {k: round(v, 2) for k, v in r["tier_means"].items()}, "p =", round(r["anova_p"], 4))

# Comparing two specific tracts.

lo = min(hoods, key=lambda h: h.p_mean).tract_id
hi = max(hoods, key=lambda h: h.p_mean).tract_id
print(pairwise_comparison(lo, hi, hoods))
