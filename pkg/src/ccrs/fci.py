"""Determinant-space machinery: FCI oracle and exact operator application.

Determinants are occupation bitmasks over spin orbitals (interleaved
alpha/beta, alpha on even indices).  Besides the FCI ground state this
module provides generic second-quantized operator application, which the
test suite uses to evaluate coupled-cluster defining expressions exactly on
desk-scale systems.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np


@dataclass
class DeterminantBasis:
    n_so: int
    n_elec: int
    dets: list                 # occupation bitmasks, sorted
    index: dict                # bitmask -> position

    @property
    def size(self):
        return len(self.dets)


def determinant_basis(n_so, n_elec, sz=None):
    """All n_elec-electron determinants, optionally restricted to fixed Sz.

    sz is measured in units of hbar (alpha minus beta count over two); the
    interleaved convention puts alpha spin orbitals on even indices.
    """
    dets = []
    for occ in combinations(range(n_so), n_elec):
        if sz is not None:
            n_alpha = sum(1 for p in occ if p % 2 == 0)
            if n_alpha - (n_elec - n_alpha) != 2 * sz:
                continue
        mask = 0
        for p in occ:
            mask |= 1 << p
        dets.append(mask)
    dets.sort()
    return DeterminantBasis(n_so=n_so, n_elec=n_elec, dets=dets,
                            index={d: i for i, d in enumerate(dets)})


def reference_mask(n_occ):
    return (1 << n_occ) - 1


def _phase(mask, p):
    """Sign (-1)^(number of occupied spin orbitals below p)."""
    return 1 - 2 * (bin(mask & ((1 << p) - 1)).count("1") % 2)


def annihilate(mask, p):
    if not mask & (1 << p):
        return None, 0
    return mask ^ (1 << p), _phase(mask, p)


def create(mask, p):
    if mask & (1 << p):
        return None, 0
    return mask | (1 << p), _phase(mask, p)


def apply_one_body(coeff, vec, basis):
    """Apply sum_pq coeff[p,q] a_p^+ a_q to a vector in the determinant basis."""
    out = np.zeros_like(vec)
    nz = np.argwhere(np.abs(coeff) > 0)
    for idx, det in enumerate(basis.dets):
        c = vec[idx]
        if c == 0.0:
            continue
        for p, q in nz:
            m1, s1 = annihilate(det, q)
            if m1 is None:
                continue
            m2, s2 = create(m1, p)
            if m2 is None:
                continue
            out[basis.index[m2]] += coeff[p, q] * s1 * s2 * c
    return out


def apply_two_body(coeff, vec, basis):
    """Apply (1/4) sum coeff[p,q,r,s] a_p^+ a_q^+ a_s a_r to a vector."""
    out = np.zeros_like(vec)
    n = basis.n_so
    for idx, det in enumerate(basis.dets):
        c = vec[idx]
        if c == 0.0:
            continue
        occ = [p for p in range(n) if det & (1 << p)]
        for r in occ:
            m1, s1 = annihilate(det, r)
            for s in occ:
                if s == r:
                    continue
                m2, s2 = annihilate(m1, s)
                for q in range(n):
                    m3, s3 = create(m2, q)
                    if m3 is None:
                        continue
                    for p in range(n):
                        m4, s4 = create(m3, p)
                        if m4 is None:
                            continue
                        val = coeff[p, q, r, s]
                        if val == 0.0:
                            continue
                        out[basis.index[m4]] += 0.25 * val * s1 * s2 * s3 * s4 * c
    return out


def apply_excitation(t1, t2, vec, basis, n_occ):
    """Apply the cluster operator T = T1 + T2 built from amplitude tensors."""
    n = basis.n_so
    c1 = np.zeros((n, n))
    c1[n_occ:, :n_occ] = t1.T
    c2 = np.zeros((n, n, n, n))
    c2[n_occ:, n_occ:, :n_occ, :n_occ] = t2.transpose(2, 3, 0, 1)
    return apply_one_body(c1, vec, basis) + apply_two_body(c2, vec, basis)


def apply_deexcitation(l1, l2, vec, basis, n_occ):
    """Apply Lambda = Lambda1 + Lambda2 (de-excitation) from amplitude tensors."""
    n = basis.n_so
    c1 = np.zeros((n, n))
    c1[:n_occ, n_occ:] = l1
    c2 = np.zeros((n, n, n, n))
    c2[:n_occ, :n_occ, n_occ:, n_occ:] = l2
    return apply_one_body(c1, vec, basis) + apply_two_body(c2, vec, basis)


def apply_exp(op, vec, max_power=None, tol=1e-15):
    """Apply exp(op) by its terminating power series (op is nilpotent here)."""
    out = vec.copy()
    term = vec.copy()
    k = 0
    limit = max_power if max_power is not None else 4 * len(vec)
    while k < limit:
        k += 1
        term = op(term) / k
        nrm = np.abs(term).max(initial=0.0)
        if nrm < tol:
            break
        out = out + term
    return out


def build_hamiltonian(sys, basis):
    """Dense Hamiltonian over the determinant basis via Slater-Condon rules."""
    n = basis.n_so
    h, w = sys.h, sys.w
    dim = basis.size
    ham = np.zeros((dim, dim))
    for col, det in enumerate(basis.dets):
        occ = [p for p in range(n) if det & (1 << p)]
        virt = [p for p in range(n) if not det & (1 << p)]
        diag = sum(h[p, p] for p in occ)
        diag += 0.5 * sum(w[p, q, p, q] for p in occ for q in occ)
        ham[col, col] += diag
        for i in occ:
            m1, s1 = annihilate(det, i)
            for a in virt:
                m2, s2 = create(m1, a)
                row = basis.index.get(m2)
                if row is None:
                    continue
                val = h[a, i] + sum(w[a, k, i, k] for k in occ if k != i)
                ham[row, col] += s1 * s2 * val
        for ii in range(len(occ)):
            for jj in range(ii):
                i, j = occ[ii], occ[jj]
                m1, s1 = annihilate(det, j)
                m2, s2 = annihilate(m1, i)
                for aa in range(len(virt)):
                    for bb in range(aa):
                        a, b = virt[aa], virt[bb]
                        m3, s3 = create(m2, b)
                        m4, s4 = create(m3, a)
                        row = basis.index.get(m4)
                        if row is None:
                            continue
                        ham[row, col] += s1 * s2 * s3 * s4 * w[a, b, i, j]
    return ham


def fci_solve(sys, n_elec, max_dim=12000, sz=0):
    """Lowest eigenpair of the Hamiltonian in the fixed-Sz determinant space.

    Returns (total energy including e_nuc, ground-state vector, basis).
    """
    basis = determinant_basis(sys.n_so, n_elec, sz=sz)
    if basis.size > max_dim:
        raise ValueError("determinant space too large (%d > %d)"
                         % (basis.size, max_dim))
    ham = build_hamiltonian(sys, basis)
    if basis.size <= 1500:
        evals, evecs = np.linalg.eigh(ham)
        e0, v0 = evals[0], evecs[:, 0]
    else:
        from scipy.sparse.linalg import eigsh
        evals, evecs = eigsh(ham, k=1, which="SA")
        e0, v0 = evals[0], evecs[:, 0]
    return float(e0 + sys.e_nuc), v0, basis


def fci_rdm1(vec, basis):
    """<Psi|a_p^+ a_q|Psi> by direct determinant expectation values."""
    n = basis.n_so
    gamma = np.zeros((n, n))
    for idx, det in enumerate(basis.dets):
        c = vec[idx]
        if c == 0.0:
            continue
        for q in range(n):
            m1, s1 = annihilate(det, q)
            if m1 is None:
                continue
            for p in range(n):
                m2, s2 = create(m1, p)
                if m2 is None:
                    continue
                row = basis.index.get(m2)
                if row is None:
                    continue
                gamma[p, q] += vec[row] * s1 * s2 * c
    return gamma


def fci_rdm2(vec, basis):
    """<Psi|a_p^+ a_q^+ a_s a_r|Psi> by direct determinant expectation values."""
    n = basis.n_so
    gam = np.zeros((n, n, n, n))
    for idx, det in enumerate(basis.dets):
        c = vec[idx]
        if c == 0.0:
            continue
        occ = [p for p in range(n) if det & (1 << p)]
        for r in occ:
            m1, s1 = annihilate(det, r)
            for s in occ:
                if s == r:
                    continue
                m2, s2 = annihilate(m1, s)
                for q in range(n):
                    m3, s3 = create(m2, q)
                    if m3 is None:
                        continue
                    for p in range(n):
                        m4, s4 = create(m3, p)
                        if m4 is None:
                            continue
                        row = basis.index.get(m4)
                        if row is None:
                            continue
                        gam[p, q, r, s] += vec[row] * s1 * s2 * s3 * s4 * c
    return gam


def cc_state_vectors(amps, basis, n_occ):
    """|R> = exp(T)|Phi> and <L| = <Phi|(1+Lambda)exp(-T) as dense vectors."""
    dim = basis.size
    ref = np.zeros(dim)
    ref[basis.index[reference_mask(n_occ)]] = 1.0
    right = apply_exp(lambda v: apply_excitation(amps.t1, amps.t2, v, basis, n_occ),
                      ref)
    # <Phi|(1+L)e^{-T} as a ket: apply the transposed operators right-to-left
    left = ref.copy()
    if amps.has_lambda:
        left = left + _apply_deexcitation_transpose(amps.l1, amps.l2, ref, basis, n_occ)
    left = apply_exp(lambda v: -_apply_excitation_transpose(amps.t1, amps.t2, v,
                                                            basis, n_occ), left)
    return left, right


def _apply_excitation_transpose(t1, t2, vec, basis, n_occ):
    n = basis.n_so
    c1 = np.zeros((n, n))
    c1[n_occ:, :n_occ] = t1.T
    c2 = np.zeros((n, n, n, n))
    c2[n_occ:, n_occ:, :n_occ, :n_occ] = t2.transpose(2, 3, 0, 1)
    # (a_p^+ a_q)^T = a_q^+ a_p and (p^+ q^+ s r)^T = r^+ s^+ q p for real coeffs
    return (apply_one_body(c1.T, vec, basis)
            + apply_two_body(c2.transpose(2, 3, 0, 1), vec, basis))


def _apply_deexcitation_transpose(l1, l2, vec, basis, n_occ):
    n = basis.n_so
    c1 = np.zeros((n, n))
    c1[:n_occ, n_occ:] = l1
    c2 = np.zeros((n, n, n, n))
    c2[:n_occ, :n_occ, n_occ:, n_occ:] = l2
    return (apply_one_body(c1.T, vec, basis)
            + apply_two_body(c2.transpose(2, 3, 0, 1), vec, basis))
