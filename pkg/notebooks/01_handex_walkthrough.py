# %% [markdown]
# # A twenty-unit walkthrough
#
# Two binary experiments overlap on a small hand-built population. Every
# number below can be checked with pencil and paper.

# %%
from mea import build_partition, combination_effect, region_weights, scenario_effect
from mea.datasets import HANDEX_CSV, load_handex
from mea.partitioner import region_label

print(HANDEX_CSV)
table = load_handex()
part = build_partition(table)

# %% [markdown]
# ## Regions and weights
#
# Units are grouped by which experiments they triggered. Weights are each
# region's share of the impacted population.

# %%
for state, n in part.region_counts.items():
    print(region_label(state), n, round(region_weights(part)[state], 3))

# %% [markdown]
# ## Launching both treatments
#
# Each supported region contributes the difference between its target and
# baseline cell means, weighted by its size.

# %%
both = combination_effect(part, ("t1", "t2"), variance_method="analytic")
for c in both.ledger:
    print(f"{c.region}: weight {c.weight:.2f}, delta {c.delta:+.1f}")
print("combination effect", round(both.point, 6), "CI", [round(x, 3) for x in both.ci])

# %% [markdown]
# ## A scenario: E2's effect once E1 ships t1
#
# Only regions where E2 triggers count, so R10 drops out and the weights
# become 8/14 and 6/14.

# %%
given_t1 = scenario_effect(part, {"e1": "t1"}, "e2", "t2", variance_method="analytic")
print(round(given_t1.point, 6), "=", round(48 / 14, 6))
