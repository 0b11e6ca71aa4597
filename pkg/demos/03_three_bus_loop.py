# coding: utf-8

# # Loop flows help the competitor
#
# Three units of 30 MW at $20 sit on a triangle of 23 MW lines; the 75 MW
# load is at B's bus. This network is a derived configuration: the published
# description leaves line limits and load placement open.

# In[1]:

from mitbid.experiments import load_case, strategy_table
from mitbid.bidding import evaluate_strategy

s = load_case("three_bus_loop")
print(s.notes)
print(strategy_table(s))


# When A raises its offer, power from C has to reach bus 2 through the loop.
# The binding lines make B's bus the most expensive one, so B earns more from
# A's withholding than A does.

# In[2]:

out = evaluate_strategy(s, "conduct")
print({b: round(v, 2) for b, v in out.report.after.lmp.items()})
print("A", out.report.after.profit["A"], "B", out.report.after.profit["B"])


# The impact-aware bidder is held back harder here: every bus price must stay
# within $20 of the competitive $20, and B's bus moves twice as fast as A's.

# In[3]:

out = evaluate_strategy(s, "impact")
print(out.solution.offers["A"], out.realized_profit)
