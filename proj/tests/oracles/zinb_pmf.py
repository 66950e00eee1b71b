"""Zero-inflated negative binomial point probabilities (mean/size form)."""
import math
from scipy import stats


def nb(y, mu, size):
    return stats.nbinom.pmf(y, size, size / (size + mu))


print("p0", math.log(0.5 + 0.5 * nb(0, 2.0, 1.0)), math.log(2.0 / 3.0))
for y, mu, size, pz in [(0, 3.7, 2.0, 0.3), (4, 3.7, 2.0, 0.3), (17, 12.5, 0.8, 0.05)]:
    v = (pz if y == 0 else 0.0) + (1 - pz) * nb(y, mu, size)
    print(f"y={y} mu={mu} size={size} pz={pz} logpmf={math.log(v)!r}")
