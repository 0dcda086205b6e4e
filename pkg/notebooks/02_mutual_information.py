# %% [markdown]
# # Mutual information through a density ratio
#
# For jointly Gaussian (U, V) with corr(U_i, V_i) = rho, the mutual
# information is -p/2 log(1 - rho^2). Pairing U with shuffled V gives a
# sample from the product of marginals, and MI is the mean log ratio of
# joint over product evaluated on joint draws.

# %%
import numpy as np

from ppdre import FitConfig, fit
from ppdre.applications import estimate_mi
from ppdre.worlds import gen_mi_gaussian

for p, rho in ((2, 0.8), (10, 0.2)):
    s = gen_mi_gaussian(p, rho, 4000, seed=1)
    model = fit(s.X_p, s.X_q, FitConfig(J=50, lam=0.5, lr=0.1, seed=1), K=4)
    est = [estimate_mi(model.truncated(K), s.X_p) for K in range(1, model.K + 1)]
    print(f"p={p} rho={rho}: true MI {s.value:.4f}; estimate by K: {np.round(est, 4)}")

# %% [markdown]
# With p=2 the dependence lives in two planes, so the estimate keeps rising
# for a few factors. In the p=10, rho=0.2 case the signal is spread thinly
# over ten planes; no single direction carries enough of it, and the
# estimate stays near zero.
