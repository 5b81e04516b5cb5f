# %% [markdown]
# # Heat kernels and spectral dimension
#
# A finite symmetric chain is fixed by its reference measure `m` and a
# generator `L` with `m(x) L[x, y] = m(y) L[y, x]`.  Everything downstream
# (heat kernels, survival, resolvents) comes from one symmetric eigensolve.

# %%
import numpy as np

from iml import model_zoo
from iml.space import heat_kernel, heat_trace, spectral_decompose, survival_probability

zoo = model_zoo.example_models()
spec = spectral_decompose(zoo["birth-death-killed"])
print("eigenvalues of -L:", np.round(spec.eigenvalues, 6))
print("bottom of the spectrum:", spec.lambda1)

# %% [markdown]
# Survival decays at rate `lambda_1`; at t = 50 the log-rate is already
# within a few thousandths of it.

# %%
for t in (1.0, 5.0, 20.0, 50.0):
    s = survival_probability(spec, 0, t)
    print(f"t={t:5.1f}  P(t < zeta) = {s:.3e}   -(1/t) log P = {-np.log(s) / t:.5f}")

# %% [markdown]
# Heat kernels are densities with respect to `m`, so rows of
# `values * m` are transition probabilities (substochastic here).

# %%
P = heat_kernel(spec, 0.7)
print("row sums of the transition matrix:", np.round(P.matrix.sum(axis=1), 6))

# %% [markdown]
# ## Spectral dimension from the heat trace
#
# On the gasket the trace `sum_x p_t(x, x) m(x)` behaves like
# `t^(-d_s/2)` above the lattice time scale; lattices give the integer
# dimensions.

# %%
cases = {
    "gasket level 4": (model_zoo.build_gasket_graph(4), 2.0**-4, model_zoo.GASKET_DW, model_zoo.GASKET_DS),
    "path of 17": (model_zoo.build_grid((17,)), 1 / 16, 2.0, 1.0),
    "17 x 17 grid": (model_zoo.build_grid((17, 17)), 1 / 16, 2.0, 2.0),
}
for name, (mod, mesh, d_w, target) in cases.items():
    window = (model_zoo.lattice_cutoff(mesh, d_w), 0.01)
    fit = model_zoo.fit_trace_exponent(spectral_decompose(mod), window)
    print(f"{name:15s} fitted d_s = {fit.exponent:.3f}  (target {target:.3f})")

# %%
g = spectral_decompose(model_zoo.build_gasket_graph(3))
ts = np.geomspace(1e-3, 1e-1, 5)
print("gasket level 3 trace:", np.round(heat_trace(g, ts), 3))
