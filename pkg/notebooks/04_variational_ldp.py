# %% [markdown]
# # Variational values and exponential moments
#
# `N(theta, eps, h)` is a supremum over unit vectors psi in L^2(m) of
# `theta (sum (p_eps psi^2)^p h m)^(1/p) - p E(psi, psi) + p lambda_1`.
# It is solved by projected gradient ascent with several starts; on three
# states or fewer a grid search certifies the answer.

# %%
import numpy as np

from iml import ldp, model_zoo
from iml.space import spectral_decompose

spec = spectral_decompose(model_zoo.birth_death_killed())
for theta in (0.0, 0.5, 1.0, 2.0):
    r = ldp.variational_N(spec, theta, 0.0, np.ones(3), 2, certify=True)
    print(f"theta={theta}: N={r.value:.8f}  grid gap={r.certificate}")

# %% [markdown]
# ## Feynman-Kac check
#
# For a single occupation functional the scaled cumulant is a principal
# eigenvalue.  The same ascent, run on the linear objective, reproduces it.

# %%
f = np.array([1.0, 0.0, 0.3])
for eps in (0.0, 0.1, 1.0):
    chk = ldp.occupation_varadhan_check(spec, f, 0.5, eps)
    print(f"eps={eps}: eigenvalue {chk.lhs:.10f}  variational {chk.rhs:.10f}  gap {chk.gap:.1e}")

# %% [markdown]
# ## Monte Carlo slope
#
# Two copies of the three-state conservative chain, theta = 0.5, h = 1.
# The per-t values of `(1/t) log E exp(theta <l^IS, h>^(1/2))` are
# extrapolated linearly in 1/t.

# %%
mod = model_zoo.three_state_conservative()
res = ldp.mc_log_mgf_slope([mod, mod], 0.5, np.ones(3), 2, 0.0, (10.0, 20.0, 40.0), 50_000, seed=7)
for t, v, s in zip(res.times, res.values, res.ses):
    print(f"t={t:4.0f}: {v:.5f} +- {s:.5f}")
print(f"slope {res.slope:.4f} +- {res.slope_se:.4f}, variational value {res.rhs:.4f}")
