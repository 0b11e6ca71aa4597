# coding: utf-8

# # A day on the 6-bus system
#
# GenCo G owns units A, C and H. Loads are split over buses 3-6 in the fixed
# shares [0, 0, 0.19, 0.27, 0.27, 0.27]; the hourly totals are a derived
# profile (see derive_six_bus_demand.py).

# In[1]:

from mitbid.experiments import load_case, six_bus_profile, six_bus_table, hourly_run, hourly_table
from mitbid.network import scale_loads
from mitbid.plots import line_plot

s = load_case("six_bus")
profile = six_bus_profile(s)
at14 = scale_loads(s, 14, profile)
print(six_bus_table(at14))


# All four strategies for every hour. Node LPs use HiGHS here to keep the run
# to about a minute; the final leaf of each search is re-solved with the
# built-in simplex.

# In[2]:

rows = hourly_run(s, profile)
print(hourly_table(rows))


# In[3]:

for metric in ("realized_profit", "welfare"):
    series = {}
    for r in rows:
        series.setdefault(r.strategy.label, ([], []))
        series[r.strategy.label][0].append(r.hour)
        series[r.strategy.label][1].append(getattr(r, metric))
    print(line_plot(f"six_bus_{metric}.svg", series, "hour", metric))
