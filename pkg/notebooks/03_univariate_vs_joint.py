# %% [markdown]
# # When per-experiment readouts pick the wrong launch
#
# In the `appendix-c` preset each treatment helps on its own but the pair
# interacts badly. Reading each experiment separately, or one after the
# other, ships both; the joint analysis ships only t2.

# %%
from mea.simulator import preset, sequential_pipeline, three_way_comparison

cfg = preset("appendix-c")
out = three_way_comparison(cfg, seed=3)
for name in ("univariate", "sequential", "mea"):
    decision = out[name]["decision"]
    print(f"{name:11s} ships {decision}  true effect {out['ground_truth'][decision]:+.2f}")

# %% [markdown]
# ## The sequential trace
#
# Stage 1 sees E1 help on average because half of the overlap runs E2's
# control. Once t1 is live everywhere, E2 still looks positive, so it ships
# too.

# %%
trace = sequential_pipeline(cfg, seed=3)
print("stage 1", trace.stage1_effects, "->", trace.stage1_ship)
print("stage 2", trace.stage2_effects, "->", trace.stage2_ship)

# %% [markdown]
# ## All combinations from the joint analysis

# %%
for combo, est in out["combinations"].items():
    print(combo, f"{est:+.2f}", "truth", f"{out['ground_truth'][combo]:+.2f}")
