"""Restricted Hartree-Fock, MO transformation, and spin-orbital expansion."""

from dataclasses import dataclass
import numpy as np

from .contract import einsum
from .diis import Diis


@dataclass
class ScfResult:
    c: np.ndarray          # AO x MO coefficients, columns ordered by energy
    eps: np.ndarray        # orbital energies, ascending
    e_hf: float            # total HF energy including nuclear repulsion
    n_occ: int
    n_virt: int
    density: np.ndarray    # AO density, D = 2 C_occ C_occ^T
    converged: bool
    n_iter: int


@dataclass
class MoIntegrals:
    h: np.ndarray
    eri: np.ndarray                 # chemists' (pq|rs), MO basis
    e_nuc: float
    origin: np.ndarray
    dipole: np.ndarray = None
    quadrupole: np.ndarray = None


def lowdin_x(s, floor=1e-10):
    """Symmetric orthogonalizer S^(-1/2); raises on a near-singular overlap."""
    w, u = np.linalg.eigh(s)
    if w.min() <= 0 or w.min() < floor * w.max():
        raise ValueError("overlap matrix is numerically singular "
                         "(eigenvalue ratio %.2e)" % (w.min() / w.max()))
    return u @ np.diag(w ** -0.5) @ u.T


def solve_rhf(ints, n_electrons, max_iter=100, e_tol=1e-10, d_tol=1e-8,
              diis_depth=8):
    """Iterate the closed-shell Roothaan equations to self-consistency.

    Symmetric orthogonalization with a core-Hamiltonian initial guess and
    Fock-matrix DIIS on the FDS - SDF error.  A non-converged result is
    returned with converged=False rather than raised.
    """
    if n_electrons % 2 != 0:
        raise ValueError("n_electrons must be even")
    n_occ = n_electrons // 2
    if n_occ > ints.n_ao:
        raise ValueError("more electron pairs than basis functions")
    x = lowdin_x(ints.s)
    h = ints.hcore
    eps, cp = np.linalg.eigh(x.T @ h @ x)
    c = x @ cp
    d = 2.0 * c[:, :n_occ] @ c[:, :n_occ].T

    diis = Diis(diis_depth) if diis_depth > 0 else None
    f = h + _coulomb_exchange(ints.eri, d)
    e_old = 0.5 * np.sum(d * (h + f)) + ints.e_nuc
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        f = h + _coulomb_exchange(ints.eri, d)
        e = 0.5 * np.sum(d * (h + f)) + ints.e_nuc
        err = x.T @ (f @ d @ ints.s - ints.s @ d @ f) @ x
        if diis is not None:
            f = diis.step(f, err).reshape(f.shape)
        eps, cp = np.linalg.eigh(x.T @ f @ x)
        c = x @ cp
        d_new = 2.0 * c[:, :n_occ] @ c[:, :n_occ].T
        delta_d = np.abs(d_new - d).max()
        d = d_new
        if abs(e - e_old) < e_tol and delta_d < d_tol:
            converged = True
            break
        e_old = e

    f = h + _coulomb_exchange(ints.eri, d)
    e_hf = 0.5 * np.sum(d * (h + f)) + ints.e_nuc
    return ScfResult(c=c, eps=eps, e_hf=e_hf, n_occ=n_occ,
                     n_virt=ints.n_ao - n_occ, density=d,
                     converged=converged, n_iter=n_iter)


def _coulomb_exchange(eri, d):
    j = einsum("pqrs,rs->pq", eri, d)
    k = einsum("prqs,rs->pq", eri, d)
    return j - 0.5 * k


def mo_transform(ints, c):
    """Transform all stored integrals to the MO basis defined by columns of c.

    The four-index transform runs as four successive one-index contractions.
    """
    if c.shape[0] != ints.n_ao:
        raise ValueError("coefficient matrix does not match the AO dimension")
    h = c.T @ ints.hcore @ c
    eri = einsum("pqrs,pi->iqrs", ints.eri, c)
    eri = einsum("iqrs,qj->ijrs", eri, c)
    eri = einsum("ijrs,rk->ijks", eri, c)
    eri = einsum("ijks,sl->ijkl", eri, c)
    dip = None if ints.dipole is None else einsum("wpq,pi,qj->wij", ints.dipole, c, c)
    quad = None if ints.quadrupole is None else einsum("wpq,pi,qj->wij", ints.quadrupole, c, c)
    return MoIntegrals(h=h, eri=eri, e_nuc=ints.e_nuc, origin=ints.origin,
                       dipole=dip, quadrupole=quad)


def spin_expand_matrix(m):
    """Spatial matrix -> spin-orbital matrix in interleaved (a, b) ordering."""
    n, k = m.shape
    out = np.zeros((2 * n, 2 * k))
    out[0::2, 0::2] = m
    out[1::2, 1::2] = m
    return out


def spin_orbital_expand(mo, n_occ):
    """Build the antisymmetrized spin-orbital system from restricted MO integrals.

    Spin orbitals interleave alpha/beta: spin orbital 2p+s derives from
    spatial orbital p.  Returns a cc-solver SpinOrbitalSystem whose Fock
    matrix is diagonal in the canonical gauge.
    """
    from .ccsd import SpinOrbitalSystem

    nso = 2 * mo.h.shape[0]
    h = spin_expand_matrix(mo.h)
    spin = np.arange(nso) % 2
    same = (spin[:, None] == spin[None, :]).astype(float)
    chem = mo.eri
    for ax in range(4):
        chem = np.repeat(chem, 2, axis=ax)
    chem = chem * same[:, :, None, None] * same[None, None, :, :]
    # <pq||rs> = (pr|qs) - (ps|qr)
    w = einsum("prqs->pqrs", chem) - einsum("psqr->pqrs", chem)
    no = 2 * n_occ
    f = h + einsum("piqi->pq", w[:, :no, :, :no])
    e_ref = h[:no, :no].trace() + 0.5 * einsum("ijij->", w[:no, :no, :no, :no]) + mo.e_nuc
    return SpinOrbitalSystem(n_occ=no, n_virt=nso - no, h=h, f=f, w=w,
                             e_ref=e_ref, e_nuc=mo.e_nuc)
