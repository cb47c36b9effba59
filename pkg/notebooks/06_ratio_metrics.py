# %% [markdown]
# # Click-through rate across overlapping experiments
#
# Ratio metrics divide two weighted means, so the effect is not a weighted
# sum of per-region deltas. The jackknife handles this without any extra
# algebra; the Delta method gives a closed form to compare against.

# %%
from mea import build_partition
from mea.estimator import combination_comparison, ratio_effect
from mea.simulator import simulate_ctr_population

table, lift = simulate_ctr_population(40_000, seed=3)
part = build_partition(table)
comp = combination_comparison(part.experiments, ("t1", "c2"))
metric = table.config.metric("ctr")
jk = ratio_effect(part, comp, metric, variance_method="jackknife")
dm = ratio_effect(part, comp, metric, variance_method="analytic")
print("true lift", lift)
print(f"jackknife {jk.point:+.4f} se {jk.se:.4f}")
print(f"delta     {dm.point:+.4f} se {dm.se:.4f}")

# %% [markdown]
# ## Coverage over repeated draws

# %%
reps = 200
hits = 0
for seed in range(reps):
    t, lift = simulate_ctr_population(4_000, seed)
    p = build_partition(t)
    est = ratio_effect(p, combination_comparison(p.experiments, ("t1", "c2")), t.config.metric("ctr"))
    hits += est.ci[0] <= lift <= est.ci[1]
print("coverage", hits / reps)
