"""Median and 90th-percentile curves from a one-dimensional GP quantile model.

Run: python demos/gp_quantiles.py
"""

import numpy as np

from qrlaplace.design import GpDesign, make_fixed_design
from qrlaplace.laplace import FitConfig, fit, predict
from qrlaplace.model import QuantileModel

rng = np.random.default_rng(0)
n = 300
x = np.sort(rng.uniform(0, 1, n))
y = np.sin(6 * x) + (0.2 + 0.4 * x) * rng.standard_normal(n)
grid = np.linspace(0, 1, 11)

print("   x   " + "  ".join(f"{g:5.2f}" for g in grid))
for tau in (0.5, 0.9):
    model = QuantileModel(tau, GpDesign(x[:, None]), make_fixed_design(n), "tkc")
    res = fit(model, y, config=FitConfig(n_restarts=1))
    q, sd = predict(res, grid[:, None], np.ones((grid.size, 1)))
    print(f"q{tau:.2f}  " + "  ".join(f"{v:5.2f}" for v in q))
    print(f"  sd   " + "  ".join(f"{v:5.2f}" for v in sd))
    print(f"  fitted sigma2={res.theta_hat[0]:.3f} lengthscale={res.theta_hat[1]:.3f} lambda={res.lambda_hat:.3f}")
