# coding: utf-8

# # Where the 6-bus 14:00 numbers come from
#
# The published case gives unit data and G's offers at 14:00, but the network
# limits and hourly demand are only drawn in figures. Two numbers are derived:
#
# * the limit of line 4-5, from the energy balance of the bus 5-6 pocket, so
#   that H's fourth block is the marginal one there;
# * the 14:00 total demand, by bisection on unit A's dispatch.

# In[1]:

from scipy.optimize import brentq

from mitbid.clearing import clear, truthful_offers
from mitbid.experiments import SIX_BUS_PUBLISHED_OFFERS, load_case

s = load_case("six_bus")
shares = dict(s.load_shares)
G_A, G_H = 119.08, 157.60


# Line 2-4 carries its 230 MW limit into bus 4, where A is the only unit.
# What A produces beyond bus 4's own load continues to 5-6 over line 4-5:
#
#     g_A = 0.27 D + P45 - 230
#
# Inside the pocket J runs flat out (155 MW) and H tops up:
#
#     g_H = 0.54 D - 155 - P45
#
# Solving both for the published dispatch:

# In[2]:

D = (G_A + G_H + 230 + 155) / (shares["4"] + shares["5"] + shares["6"])
P45 = G_A + 230 - shares["4"] * D
print(f"D ~ {D:.2f} MW, line 4-5 limit {P45:.2f} MW")


# At that exact point H's fourth block clears at zero output, so the pocket
# price is not pinned by any block. The shipped file lowers the limit slightly,
# to 128.44 MW, which leaves about 0.24 MW on H's fourth block: the pocket then
# clears at H's $23.44 offer, and g_H exceeds the published 157.60 by 0.15%.

# In[3]:

print("line 4-5 limit in the file:", s.branches[3].limit_mw)


# Now fix the limit and search the total that clears A at 119.08 MW.

# In[4]:

offers = truthful_offers(s)
offers.update(SIX_BUS_PUBLISHED_OFFERS)


def g_a(total):
    sc = s.with_loads({b: total * shares[b] for b in s.bus_ids})
    return clear(sc, offers).dispatch["A"] - G_A


total = brentq(g_a, 700.0, 870.0, xtol=1e-6)
print(f"14:00 total demand {total:.2f} MW")
