# %% [markdown]
# # Covariate shift adaptation
#
# Friedman regression data split by a logistic selection rule along a
# random direction, so training and test inputs differ in distribution.
# Importance weights r(x) = p_test(x) / p_train(x) reweight the kernel
# ridge regression loss on the training rows.

# %%
import numpy as np

from ppdre import FitConfig, fit
from ppdre.applications import krr_fit, krr_select_lambda
from ppdre.io import StandardizedModel
from ppdre.metrics import nmse
from ppdre.worlds import gen_covariate_shift, gen_friedman

X, y = gen_friedman(2000, 1.0, seed=3)
split = gen_covariate_shift(X, y, seed=3)
print(f"train {split.X_train.shape[0]} rows, test {split.X_test.shape[0]} rows")

shift, scale = StandardizedModel.fit_transform(split.X_test, split.X_train)
model = StandardizedModel(fit((split.X_test - shift) / scale, (split.X_train - shift) / scale,
                              FitConfig(J=50, lam=0.5, lr=0.1, seed=3), K=2), shift, scale)

# %%
for name, w in (("unweighted", np.ones(split.y_train.size)), ("ppDRE", model(split.X_train))):
    lam, _ = krr_select_lambda(split.X_train, split.y_train, w, seed=3)
    pred = krr_fit(split.X_train, split.y_train, w, lam)(split.X_test)
    print(f"{name:>10}: lambda {lam:g}, test NMSE {nmse(split.y_test, pred):.4f}")
