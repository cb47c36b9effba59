# %% [markdown]
# # Checking that arms do not change who triggers
#
# The estimators assume a unit's arm in one experiment does not shift its
# chance of triggering another. Here one population respects that and a
# second one breaks it on purpose.

# %%
from mea import invariance_check
from mea.diagnostics import bar_chart_csv
from mea.simulator import Contamination, preset, simulate_population

clean = simulate_population(preset("appendix-c", n_units=50_000), seed=1)
for d in invariance_check(clean):
    print(d.source, d.verdict.value, f"p={d.p_value:.3g}", f"V={d.cramers_v:.4f}")

# %% [markdown]
# ## A contaminated population
#
# Units in E1's t1 arm trigger E2 twice as often. The source table for E1
# shows it in the "not triggered" column.

# %%
bad_cfg = preset("appendix-c", n_units=50_000, contamination=(Contamination("e1", "t1", "e2", 2.0),))
bad = simulate_population(bad_cfg, seed=1)
results = invariance_check(bad)
for d in results:
    print(d.source, d.verdict.value, f"p={d.p_value:.3g}", f"V={d.cramers_v:.4f}")
print(results[0].table.counts)

# %% [markdown]
# ## Bar-chart data
#
# One row per source arm and column, with the "not triggered" columns
# marked so a plot can grey them out.

# %%
print(bar_chart_csv(results[0]))
