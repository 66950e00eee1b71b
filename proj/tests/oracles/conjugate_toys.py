"""Posterior moments for the conjugate toys by 1-d quadrature."""
import numpy as np
from scipy import integrate, special, stats

# Normal-Gamma: y_i = u_i + e_i, e precision 100, u iid precision tau,
# tau ~ Gamma(1, rate 0.5).
rng = np.random.default_rng(7)
u = rng.normal(0.0, 1.0, 20)
y = np.round(u + rng.normal(0.0, 0.1, 20), 6)
kappa, shape, rate = 100.0, 1.0, 0.5
print("normal_gamma_y", ", ".join(f"{v:.6f}" for v in y))


def log_post(t):
    var = 1.0 / kappa + np.exp(-t)
    return (stats.gamma.logpdf(np.exp(t), a=shape, scale=1.0 / rate) + t
            + stats.norm.logpdf(y, 0.0, np.sqrt(var)).sum())


ts = np.linspace(-6.0, 6.0, 200001)
lp = np.array([log_post(t) for t in ts])
p = np.exp(lp - lp.max())
z = integrate.trapezoid(p, ts)
mt = integrate.trapezoid(ts * p, ts) / z
st = np.sqrt(integrate.trapezoid((ts - mt) ** 2 * p, ts) / z)
mtau = integrate.trapezoid(np.exp(ts) * p, ts) / z
sd_tau = np.sqrt(integrate.trapezoid((np.exp(ts) - mtau) ** 2 * p, ts) / z)
shrink = integrate.trapezoid(kappa / (kappa + np.exp(ts)) * p, ts) / z
print(f"log_tau mean={mt:.12g} sd={st:.12g}")
print(f"tau mean={mtau:.12g} sd={sd_tau:.12g}")
print(f"u0 mean={y[0] * shrink:.12g}")

# Gamma-Poisson: intercept-only Poisson with offsets, beta ~ N(0, 1000^2).
ys = np.array([3, 0, 5, 2, 4, 1, 2, 6, 3, 2], dtype=float)
T = np.array([1.5, 0.8, 2.0, 1.1, 1.7, 0.9, 1.0, 2.4, 1.3, 1.2])
S, TT = ys.sum(), T.sum()
bs = np.linspace(-3.0, 3.0, 600001)
lp = S * bs - np.exp(bs) * TT - bs ** 2 / 2e6
p = np.exp(lp - lp.max())
z = integrate.trapezoid(p, bs)
mb = integrate.trapezoid(bs * p, bs) / z
sb = np.sqrt(integrate.trapezoid((bs - mb) ** 2 * p, bs) / z)
print(f"gamma_poisson mean={mb:.12g} sd={sb:.12g}")
print(f"flat-prior limit mean={special.digamma(S) - np.log(TT):.12g} sd={np.sqrt(special.polygamma(1, S)):.12g}")
