# %% [markdown]
# # How much a joint analysis saves over a full factorial
#
# A coordinated factorial splits every triggered unit over all variant
# combinations. Units that trigger only some experiments need far fewer
# cells, which is where the savings come from.

# %%
from mea.power import PowerParams, factorial_variance, independent_trigger_weights, mea_variance, ratio_table

for row in ratio_table(range(1, 9), ell=2, r=0.5):
    print(f"k={row['k']}  ratio {row['ratio']:.3f}  factorial needs {row['multiplier']:.2f}x the units")

# %% [markdown]
# ## Effect of the trigger rate
#
# With every unit triggering every experiment the two designs coincide.

# %%
for r in (0.1, 0.3, 0.5, 0.8, 1.0):
    print(r, [round(x["ratio"], 3) for x in ratio_table([2, 4, 6], ell=3, r=r)])

# %% [markdown]
# ## Direct variances for a small design

# %%
p = PowerParams(k=3, ell=2, sigma2=25.0, n_plus=10_000, r=0.3)
print("factorial", factorial_variance(p))
print("joint", mea_variance(p, independent_trigger_weights(3, 0.3)))
