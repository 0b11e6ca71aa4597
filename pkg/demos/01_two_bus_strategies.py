# coding: utf-8

# # Two buses, two units, four ways to bid
#
# Unit A (strategic) and unit B each have 30 MW at $20/MWh and share a
# 50 MW load. The operator screens offers with a conduct test and an impact
# test, both at 100% of the reference levels.

# In[1]:

from mitbid.experiments import load_case, strategy_table
from mitbid.clearing import clear, truthful_offers
from mitbid.mitigation import run_pipeline

s = load_case("two_bus_homogeneous")
r = clear(s, truthful_offers(s))
print("truthful dispatch", r.dispatch, "prices", r.lmp)


# Offering at the cap looks great at bid time (A sets a $100 price) but fails
# both screens, so the operator resets the offer to $20 before the final clearing.

# In[2]:

rep = run_pipeline(s, {"A": (100.0,), "B": (20.0,)})
print("conduct verdicts", rep.conduct, "impact triggered", rep.mitigated)
print("profit before", rep.before.profit["A"], "after", rep.after.profit["A"])


# A conduct-aware bidder stays at exactly twice its cost. Equality passes the
# screen, so the $40 offer survives and A keeps $400.

# In[3]:

print(strategy_table(s))


# ## Cheaper strategic unit
#
# With c_A = $10 the conduct screen caps A at $20, which is B's price. Ties are
# split in proportion to capacity, so A undercuts by one cent and takes its full
# 30 MW. The impact-aware bidder instead raises the price to $40, the largest
# move the impact screen tolerates.

# In[4]:

print(strategy_table(load_case("two_bus_heterogeneous")))


# ## Congested line
#
# With a 23 MW line limit and all load at A's bus, A must produce 27 MW whatever
# it offers. Withholding is therefore more valuable: $540 instead of $400.

# In[5]:

print(strategy_table(load_case("two_bus_congested")))
