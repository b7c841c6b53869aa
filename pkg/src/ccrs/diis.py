"""Pulay DIIS extrapolation shared by the SCF and amplitude solvers."""

import numpy as np


class Diis:
    """Fixed-depth DIIS buffer over flattened vectors."""

    def __init__(self, depth=8):
        self.depth = depth
        self.vecs = []
        self.errs = []

    def step(self, vec, err):
        """Push (vector, error) and return the extrapolated vector."""
        self.vecs.append(np.asarray(vec, dtype=float).ravel().copy())
        self.errs.append(np.asarray(err, dtype=float).ravel().copy())
        if len(self.vecs) > self.depth:
            self.vecs.pop(0)
            self.errs.pop(0)
        m = len(self.vecs)
        if m < 2:
            return self.vecs[-1].copy()
        b = np.empty((m + 1, m + 1))
        b[:m, :m] = np.array([[e1 @ e2 for e2 in self.errs] for e1 in self.errs])
        b[m, :] = -1.0
        b[:, m] = -1.0
        b[m, m] = 0.0
        rhs = np.zeros(m + 1)
        rhs[m] = -1.0
        try:
            coef = np.linalg.solve(b, rhs)[:m]
        except np.linalg.LinAlgError:
            coef, *_ = np.linalg.lstsq(b, rhs, rcond=None)
            coef = coef[:m]
        return sum(c * v for c, v in zip(coef, self.vecs))
