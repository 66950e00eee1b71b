"""Constrained ICAR covariance on a 2x5 rook lattice: pseudo-inverse of Q
from a dense eigendecomposition."""
import numpy as np

rows, cols = 2, 5
n = rows * cols
Q = np.zeros((n, n))
for r in range(rows):
    for c in range(cols):
        i = r * cols + c
        for j in ([i + 1] if c + 1 < cols else []) + ([i + cols] if r + 1 < rows else []):
            Q[i, j] = Q[j, i] = -1.0
np.fill_diagonal(Q, -Q.sum(axis=1))
w, V = np.linalg.eigh(Q)
keep = w > 1e-10 * w.max()
P = (V[:, keep] / w[keep]) @ V[:, keep].T
print("rank", int(keep.sum()))
print("diag", ", ".join(f"{v:.17g}" for v in np.diag(P)))
print("P01", f"{P[0, 1]:.17g}", "P09", f"{P[0, 9]:.17g}")
print("frobenius", f"{np.linalg.norm(P):.17g}")
