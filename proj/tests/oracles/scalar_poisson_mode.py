"""Mode of y*x - exp(x) - x^2/2 by bisection on the score."""
import math


def root(y, lo=-5.0, hi=5.0):
    f = lambda x: y - math.exp(x) - x
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(lo) * f(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


if __name__ == "__main__":
    for y in (1, 2):
        print(f"y={y} mode={root(y) + 0.0:.17g}")
