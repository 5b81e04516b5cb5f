# %% [markdown]
# # Counting bijection tuples
#
# Given p labelled copies of an index set, we count the tuples of
# bijections whose joint labels reproduce a prescribed integer measure `A`
# (and a sub-measure `r` on a marked part).  The closed form is checked
# against exhaustive enumeration.

# %%
from collections import Counter

import numpy as np

from iml import combinatorics as cb

inst = cb.CountingInstance(
    X=(0, 1), p=1, S1_star=(1,), S2_star=(2,), F_prime=((1, 2),),
    labels=({1: 0, 2: 1},), A=Counter({(0,): 1, (1,): 1}), r=Counter({(0,): 1}),
)
print("closed form:", cb.count_psi_closed_form(inst))
print("enumeration:", cb.enumerate_psi_bruteforce(inst))

# %% [markdown]
# Random instances.  The closed form is only claimed when the set is
# nonempty; when it is empty the formula may even return a non-integer.

# %%
rng = np.random.default_rng(0)
for _ in range(8):
    inst = cb.random_instance(rng, p_max=3, s_max=4, x_max=3)
    bf = cb.count_psi_bruteforce(inst)
    cf = cb.count_psi_closed_form(inst)
    print(f"p={inst.p} |S*|={len(inst.S_star)}  brute={bf:6d}  closed={cf}")

# %% [markdown]
# ## Larger domains
#
# When the bijections run over supersets `W_i` of the marked set, the
# count picks up a factor `prod_i (#W_i - #S*)!`.  The literal set, where
# the image of `S*` is not pinned, is larger in general.

# %%
inst = cb.random_instance(rng, p_max=2, s_max=2, x_max=2, feasible_prob=1.0)
inst2, W, F = cb.extend_instance(inst, rng, extra_max=2)
print("fixed images   :", cb.count_psi_tilde_bruteforce(inst2, W, F, fix_images=True))
print("closed form    :", cb.count_psi_tilde_closed_form(inst2, W, F))
print("images unpinned:", cb.count_psi_tilde_bruteforce(inst2, W, F, fix_images=False))

# %%
report = cb.fuzz(trials=300, seed=1)
print({k: report[k] for k in ("nonempty", "mismatches", "tilde_nonempty", "tilde_mismatches")})
