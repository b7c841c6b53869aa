"""Spin-orbital MP2, CCSD, and Lambda solvers plus the CC Lagrangian.

The T equations follow the standard two-index-intermediate spin-orbital
formulation; residuals are evaluated with the full Fock matrix so the same
code handles canonical orbitals and frozen-orbital finite-field runs where
f acquires off-diagonal blocks.  The Lambda equations are the standard
linear adjoint system, solved with the same DIIS machinery.
"""

from dataclasses import dataclass, field
import numpy as np

from .contract import einsum
from .diis import Diis
from .errors import ConvergenceError, DegenerateGapError
from .gauge import AmplitudeSet

AMP_BOUND = 10.0


@dataclass
class SpinOrbitalSystem:
    """Antisymmetrized spin-orbital integrals for one reference determinant."""
    n_occ: int
    n_virt: int
    h: np.ndarray          # one-electron matrix
    f: np.ndarray          # Fock matrix (diagonal in the canonical gauge)
    w: np.ndarray          # <pq||rs>
    e_ref: float           # reference energy including e_nuc
    e_nuc: float = 0.0

    @property
    def n_so(self):
        return self.n_occ + self.n_virt

    @property
    def eps(self):
        return np.diagonal(self.f)

    @property
    def o(self):
        return slice(0, self.n_occ)

    @property
    def v(self):
        return slice(self.n_occ, self.n_so)

    def is_canonical(self, tol=1e-8):
        off = self.f - np.diag(np.diagonal(self.f))
        return np.abs(off).max(initial=0.0) < tol

    def apply_field(self, dip_so, mu_nuc, fvec):
        """Frozen-orbital homogeneous field: H <- H - F.mu, orbitals fixed.

        The electronic part adds +F.<p|r-o|q> to h and f; the nuclear dipole
        enters the reference constant.
        """
        fvec = np.asarray(fvec, dtype=float)
        shift = einsum("w,wpq->pq", fvec, np.asarray(dip_so))
        no = self.n_occ
        de_ref = float(shift[:no, :no].trace()) - float(fvec @ mu_nuc)
        return SpinOrbitalSystem(n_occ=self.n_occ, n_virt=self.n_virt,
                                 h=self.h + shift, f=self.f + shift, w=self.w,
                                 e_ref=self.e_ref + de_ref, e_nuc=self.e_nuc)


@dataclass
class CcResult:
    amps: AmplitudeSet
    e_corr: float
    e_total: float
    t_residual_norm: float
    lambda_residual_norm: float = None
    n_iter_t: int = 0
    n_iter_lambda: int = 0
    converged: bool = True


def denominators(sys, guard=1e-8):
    eo = sys.eps[sys.o]
    ev = sys.eps[sys.v]
    d1 = eo[:, None] - ev[None, :]
    d2 = (eo[:, None, None, None] + eo[None, :, None, None]
          - ev[None, None, :, None] - ev[None, None, None, :])
    if d2.size and np.abs(d2).min() < guard:
        raise DegenerateGapError(
            "orbital-energy denominator below %.0e; near-degenerate reference" % guard)
    return d1, d2


def mp2_amplitudes(sys):
    """Canonical-orbital MP2 doubles and energy; T1 is zero by construction."""
    d1, d2 = denominators(sys)
    o, v = sys.o, sys.v
    t2 = sys.w[o, o, v, v] / d2 if d2.size else np.zeros_like(d2)
    e_mp2 = 0.25 * einsum("ijab,ijab->", t2, sys.w[o, o, v, v])
    return t2, float(e_mp2)


def mp2_lambda(t2_mp2):
    """Perturbative left state: Lambda1 = 0, Lambda2 = T2 (real amplitudes)."""
    no, _, nv, _ = t2_mp2.shape
    return np.zeros((no, nv)), t2_mp2.copy()


def energy_corr(sys, t1, t2):
    """CC correlation energy; the f.t1 term vanishes in the canonical gauge."""
    o, v = sys.o, sys.v
    woovv = sys.w[o, o, v, v]
    e = einsum("ia,ia->", sys.f[o, v], t1)
    e += 0.25 * einsum("ijab,ijab->", woovv, t2)
    e += 0.5 * einsum("ijab,ia,jb->", woovv, t1, t1)
    return float(e)


def _t_intermediates(sys, t1, t2):
    o, v = sys.o, sys.v
    f, w = sys.f, sys.w
    fov = f[o, v]
    tt = np.einsum("ia,jb->ijab", t1, t1)
    tau_t = t2 + 0.5 * (tt - tt.transpose(0, 1, 3, 2))
    tau = t2 + tt - tt.transpose(0, 1, 3, 2)
    fae = (f[v, v] - 0.5 * einsum("me,ma->ae", fov, t1)
           + einsum("mf,mafe->ae", t1, w[o, v, v, v])
           - 0.5 * einsum("mnaf,mnef->ae", tau_t, w[o, o, v, v]))
    fmi = (f[o, o] + 0.5 * einsum("ie,me->mi", t1, fov)
           + einsum("ne,mnie->mi", t1, w[o, o, o, v])
           + 0.5 * einsum("inef,mnef->mi", tau_t, w[o, o, v, v]))
    fme = fov + einsum("nf,mnef->me", t1, w[o, o, v, v])
    return tau, fae, fmi, fme


def residuals_t(sys, t1, t2):
    """Projected CCSD residuals <mu|Hbar|Phi> for singles and doubles."""
    o, v = sys.o, sys.v
    f, w = sys.f, sys.w
    tau, fae, fmi, fme = _t_intermediates(sys, t1, t2)

    r1 = (f[o, v] + einsum("ie,ae->ia", t1, fae)
          - einsum("ma,mi->ia", t1, fmi)
          + einsum("imae,me->ia", t2, fme)
          - einsum("nf,naif->ia", t1, w[o, v, o, v])
          - 0.5 * einsum("imef,maef->ia", t2, w[o, v, v, v])
          - 0.5 * einsum("mnae,nmei->ia", t2, w[o, o, v, o]))

    wmnij = w[o, o, o, o].copy()
    tmp = einsum("je,mnie->mnij", t1, w[o, o, o, v])
    wmnij += tmp - tmp.transpose(0, 1, 3, 2)
    wmnij += 0.25 * einsum("ijef,mnef->mnij", tau, w[o, o, v, v])

    wabef = w[v, v, v, v].copy()
    tmp = einsum("mb,amef->abef", t1, w[v, o, v, v])
    wabef -= tmp - tmp.transpose(1, 0, 2, 3)
    wabef += 0.25 * einsum("mnab,mnef->abef", tau, w[o, o, v, v])

    wmbej = (w[o, v, v, o]
             + einsum("jf,mbef->mbej", t1, w[o, v, v, v])
             - einsum("nb,mnej->mbej", t1, w[o, o, v, o])
             - einsum("jnfb,mnef->mbej",
                      0.5 * t2 + np.einsum("jf,nb->jnfb", t1, t1), w[o, o, v, v]))

    r2 = w[o, o, v, v].copy()
    tmp = einsum("ijae,be->ijab", t2, fae - 0.5 * einsum("mb,me->be", t1, fme))
    r2 += tmp - tmp.transpose(0, 1, 3, 2)
    tmp = einsum("imab,mj->ijab", t2, fmi + 0.5 * einsum("je,me->mj", t1, fme))
    r2 -= tmp - tmp.transpose(1, 0, 2, 3)
    r2 += 0.5 * einsum("mnab,mnij->ijab", tau, wmnij)
    r2 += 0.5 * einsum("ijef,abef->ijab", tau, wabef)
    tmp = (einsum("imae,mbej->ijab", t2, wmbej)
           - einsum("ie,ma,mbej->ijab", t1, t1, w[o, v, v, o]))
    r2 += (tmp - tmp.transpose(1, 0, 2, 3)
           - tmp.transpose(0, 1, 3, 2) + tmp.transpose(1, 0, 3, 2))
    tmp = einsum("ie,abej->ijab", t1, w[v, v, v, o])
    r2 += tmp - tmp.transpose(1, 0, 2, 3)
    tmp = einsum("ma,mbij->ijab", t1, w[o, v, o, o])
    r2 -= tmp - tmp.transpose(0, 1, 3, 2)
    return r1, r2


def solve_ccsd(sys, max_iter=100, tol=1e-10, diis_depth=8):
    """Iterate the CCSD amplitude equations from the MP2 initial guess.

    DIIS over the concatenated (T1, T2) vector with the residuals as error
    vectors; converged when the max-norm of both residuals is below tol.
    """
    d1, d2 = denominators(sys)
    o, v = sys.o, sys.v
    t1 = sys.f[o, v] / d1 if d1.size else np.zeros_like(d1)
    t2 = sys.w[o, o, v, v] / d2 if d2.size else np.zeros_like(d2)
    diis = Diis(diis_depth) if diis_depth > 0 else None
    res_norm = 0.0
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        r1, r2 = residuals_t(sys, t1, t2)
        res_norm = max(np.abs(r1).max(initial=0.0), np.abs(r2).max(initial=0.0))
        if res_norm < tol:
            converged = True
            break
        t1 = t1 + r1 / d1 if d1.size else t1
        t2 = t2 + r2 / d2 if d2.size else t2
        if diis is not None:
            vec = diis.step(np.concatenate([t1.ravel(), t2.ravel()]),
                            np.concatenate([r1.ravel(), r2.ravel()]))
            t1 = vec[:t1.size].reshape(t1.shape)
            t2 = vec[t1.size:].reshape(t2.shape)
        peak = max(np.abs(t1).max(initial=0.0), np.abs(t2).max(initial=0.0))
        if peak > AMP_BOUND:
            raise ConvergenceError(
                "amplitude blow-up (|t| = %.2f); reference looks degenerate" % peak)
    if not converged:
        raise ConvergenceError("CCSD did not converge in %d iterations "
                               "(residual %.2e)" % (max_iter, res_norm))
    e_corr = energy_corr(sys, t1, t2)
    amps = AmplitudeSet(t1=t1, t2=t2, gauge="canonical").validate()
    return CcResult(amps=amps, e_corr=e_corr, e_total=sys.e_ref + e_corr,
                    t_residual_norm=res_norm, n_iter_t=n_iter)


def _lambda_intermediates(sys, t1, t2):
    o, v = sys.o, sys.v
    f, w = sys.f, sys.w
    fov = f[o, v]
    tau = t2 + 2.0 * np.einsum("ia,jb->ijab", t1, t1)
    v1 = (f[v, v] - einsum("ja,jb->ba", fov, t1)
          - einsum("jbac,jc->ba", w[o, v, v, v], t1)
          + 0.5 * einsum("jkca,jkbc->ba", w[o, o, v, v], tau))
    v2 = (f[o, o] + einsum("ib,jb->ij", fov, t1)
          - einsum("kijb,kb->ij", w[o, o, o, v], t1)
          + 0.5 * einsum("ikbc,jkbc->ij", w[o, o, v, v], tau))
    v4 = einsum("ljdb,klcd->jcbk", w[o, o, v, v], t2) + w[o, v, v, o]
    v5 = f[v, o] + einsum("kc,jkbc->bj", fov, t2)
    tmp = fov - einsum("kldc,ld->kc", w[o, o, v, v], t1)
    v5 += einsum("kc,kb,jc->bj", tmp, t1, t1)
    v5 -= 0.5 * einsum("kljc,klbc->bj", w[o, o, o, v], t2)
    v5 += 0.5 * einsum("kbdc,jkcd->bj", w[o, v, v, v], t2)
    w3 = (v5 + einsum("jcbk,jb->ck", v4, t1)
          + einsum("cb,jb->cj", v1, t1) - einsum("jk,jb->bk", v2, t1))
    woooo = (0.5 * w[o, o, o, o]
             + 0.25 * einsum("ijcd,klcd->ijkl", w[o, o, v, v], tau)
             + einsum("jilc,kc->jilk", w[o, o, o, v], t1))
    wovvo = (v4 - einsum("ljdb,lc,kd->jcbk", w[o, o, v, v], t1, t1)
             - einsum("ljkb,lc->jcbk", w[o, o, o, v], t1)
             + einsum("jcbd,kd->jcbk", w[o, v, v, v], t1))
    wovoo = (0.25 * einsum("icdb,jkdb->icjk", w[o, v, v, v], tau)
             + 0.5 * np.einsum("jkic->icjk", w[o, o, o, v])
             + einsum("icbk,jb->icjk", v4, t1)
             - einsum("lijb,klcb->icjk", w[o, o, o, v], t2))
    wvvvo = (einsum("jcak,jb->bcak", v4, t1)
             + 0.25 * einsum("jlka,jlbc->bcak", w[o, o, o, v], tau)
             - 0.5 * np.einsum("jacb->bcaj", w[o, v, v, v])
             + einsum("kbad,jkcd->bcaj", w[o, v, v, v], t2))
    return v1, v2, w3, woooo, wovvo, wovoo, wvvvo


def residuals_lambda(sys, t1, t2, l1, l2):
    """Residuals of the linear adjoint (Lambda) equations at given l1, l2."""
    o, v = sys.o, sys.v
    f, w = sys.f, sys.w
    fov = f[o, v]
    v1, v2, w3, woooo, wovvo, wovoo, wvvvo = _lambda_intermediates(sys, t1, t2)
    tau = t2 + 2.0 * np.einsum("ia,jb->ijab", t1, t1)

    mba = 0.5 * einsum("klca,klcb->ba", l2, t2)
    mij = 0.5 * einsum("kicd,kjcd->ij", l2, t2)
    m3 = einsum("klab,ijkl->ijab", l2, woooo)
    tmp = einsum("ijcd,klcd->ijkl", l2, tau)
    m3 += 0.25 * einsum("klab,ijkl->ijab", w[o, o, v, v], tmp)
    tmp = einsum("ijcd,kd->ijck", l2, t1)
    m3 -= einsum("kcba,ijck->ijab", w[o, v, v, v], tmp)
    m3 += 0.5 * einsum("ijcd,cdab->ijab", l2, w[v, v, v, v])

    r2 = w[o, o, v, v] + m3
    fov1 = fov + einsum("kjcb,kc->jb", w[o, o, v, v], t1)
    tmp = (np.einsum("ia,jb->ijab", l1, fov1)
           + einsum("kica,jcbk->ijab", l2, wovvo))
    tmp = tmp - tmp.transpose(1, 0, 2, 3)
    r2 += tmp - tmp.transpose(0, 1, 3, 2)
    tmp = (einsum("ka,ijkb->ijab", l1, w[o, o, o, v])
           + einsum("ijca,cb->ijab", l2, v1))
    m1vv = mba + einsum("ka,kb->ba", l1, t1)
    tmp += einsum("ca,ijcb->ijab", m1vv, w[o, o, v, v])
    r2 -= tmp - tmp.transpose(0, 1, 3, 2)
    tmp = (einsum("ic,jcba->jiba", l1, w[o, v, v, v])
           + einsum("kiab,jk->ijab", l2, v2))
    m1oo = mij + einsum("ic,kc->ik", l1, t1)
    tmp -= einsum("ik,kjab->ijab", m1oo, w[o, o, v, v])
    r2 += tmp - tmp.transpose(1, 0, 2, 3)

    r1 = fov + einsum("jb,ibaj->ia", l1, w[o, v, v, o])
    r1 += einsum("ib,ba->ia", l1, v1)
    r1 -= einsum("ja,ij->ia", l1, v2)
    r1 -= einsum("kjca,icjk->ia", l2, wovoo)
    r1 -= einsum("ikbc,bcak->ia", l2, wvvvo)
    r1 += einsum("ijab,jb->ia", m3, t1)
    r1 += einsum("jiba,bj->ia", l2, w3)
    tmp = (t1 + einsum("kc,kjcb->jb", l1, t2)
           - einsum("bd,jd->jb", m1vv, t1) - einsum("lj,lb->jb", mij, t1))
    r1 += einsum("jiba,jb->ia", w[o, o, v, v], tmp)
    r1 += einsum("icab,bc->ia", w[o, v, v, v], m1vv)
    r1 -= einsum("jika,kj->ia", w[o, o, o, v], m1oo)
    tmp = fov - einsum("kjba,jb->ka", w[o, o, v, v], t1)
    r1 -= einsum("ik,ka->ia", mij, tmp)
    r1 -= einsum("ca,ic->ia", mba, tmp)
    return r1, r2


def solve_lambda(sys, cc, max_iter=100, tol=1e-10, diis_depth=8):
    """Solve the adjoint equations for Lambda at fixed converged T.

    Initialized at Lambda = T (the perturbative limit where Lambda2 = T2);
    returns a new CcResult carrying the completed amplitude set.
    """
    t1, t2 = cc.amps.t1, cc.amps.t2
    d1, d2 = denominators(sys)
    l1, l2 = t1.copy(), t2.copy()
    diis = Diis(diis_depth) if diis_depth > 0 else None
    res_norm = 0.0
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        r1, r2 = residuals_lambda(sys, t1, t2, l1, l2)
        res_norm = max(np.abs(r1).max(initial=0.0), np.abs(r2).max(initial=0.0))
        if res_norm < tol:
            converged = True
            break
        l1 = l1 + r1 / d1 if d1.size else l1
        l2 = l2 + r2 / d2 if d2.size else l2
        if diis is not None:
            vec = diis.step(np.concatenate([l1.ravel(), l2.ravel()]),
                            np.concatenate([r1.ravel(), r2.ravel()]))
            l1 = vec[:l1.size].reshape(l1.shape)
            l2 = vec[l1.size:].reshape(l2.shape)
        peak = max(np.abs(l1).max(initial=0.0), np.abs(l2).max(initial=0.0))
        if peak > AMP_BOUND:
            raise ConvergenceError("lambda amplitude blow-up (|l| = %.2f)" % peak)
    if not converged:
        raise ConvergenceError("Lambda equations did not converge in %d iterations "
                               "(residual %.2e)" % (max_iter, res_norm))
    amps = AmplitudeSet(t1=t1.copy(), t2=t2.copy(), l1=l1, l2=l2,
                        gauge="canonical", basis_id=cc.amps.basis_id).validate()
    return CcResult(amps=amps, e_corr=cc.e_corr, e_total=cc.e_total,
                    t_residual_norm=cc.t_residual_norm,
                    lambda_residual_norm=res_norm,
                    n_iter_t=cc.n_iter_t, n_iter_lambda=n_iter)


def lagrangian_value(sys, amps):
    """CC Lagrangian E_ref + E_corr(T) + sum_mu lambda_mu R_mu(T).

    At converged T the residuals vanish and the value equals e_total for any
    Lambda; away from convergence the Lambda contraction carries the
    first-order information used by the stationarity checks.
    """
    t1, t2 = amps.t1, amps.t2
    val = sys.e_ref + energy_corr(sys, t1, t2)
    if amps.has_lambda:
        r1, r2 = residuals_t(sys, t1, t2)
        val += einsum("ia,ia->", amps.l1, r1)
        val += 0.25 * einsum("ijab,ijab->", amps.l2, r2)
    return float(val)
