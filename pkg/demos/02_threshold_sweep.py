# coding: utf-8

# # How tight should the screens be?
#
# Both thresholds are swept from 50% to 300% of the reference levels for the
# heterogeneous case (c_A = 10, c_B = 20), with and without congestion.

# In[1]:

from mitbid.experiments import fraction_range, sweep_cases, sweep_table
from mitbid.plots import line_plot

fractions = fraction_range(0.5, 3.0, 0.25)
results = sweep_cases(fractions)
print(sweep_table(results))


# Uncongested, the conduct-aware curve stays at $300 up to a fraction of 1.5:
# below that, undercutting B is the best A can do, and above it pricing over
# B's $20 starts to pay. The impact-aware bidder gains linearly with the
# tolerated price move.

# In[2]:

for case in ("uncongested", "congested"):
    series = {key.split("/")[1]: ([p.fraction for p in pts], [p.realized_profit for p in pts])
              for key, pts in results.items() if key.startswith(case)}
    print(case, line_plot(f"sweep_{case}.svg", series, "threshold fraction", "profit ($)", case))
