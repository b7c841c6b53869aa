"""Lambda-state density matrices and every observable derived from them.

The 1- and 2-RDMs are assembled from the derivative of the CC Lagrangian
with respect to the one- and two-electron integrals.  LAGRANGIAN_TERMS lists
the correlation Lagrangian E_corr + sum_mu lambda_mu R_mu(T) as flat
contractions, each linear in exactly one integral block with the index
orientation of the underlying second-quantized operator; the adjoint of each
contraction is its RDM contribution.  The reference and mean-field (Fock)
parts close the construction:

    gamma = gamma_HF + dL/df
    Gamma = Gamma_HF + insertion(dL/df) + antisymmetrized dL/dW
"""

import math
from dataclasses import dataclass, field
import numpy as np

from .contract import einsum
from .ccsd import (SpinOrbitalSystem, denominators, energy_corr, mp2_amplitudes,
                   solve_ccsd, solve_lambda)
from .chem import nuclear_dipole, nuclear_quadrupole
from .errors import ConvergenceError


# (integral block, coefficient, einsum subscripts, amplitude operands).
# The first subscript group belongs to the integral block; permutational
# antisymmetrizers of the residuals are absorbed into the coefficients
# against the antisymmetry of l2.
LAGRANGIAN_TERMS = [
    # correlation energy
    ("f_ov",   1.0,     "ia,ia",                ("t1",)),
    ("w_oovv", 0.5,     "jiba,ia,jb",           ("t1", "t1")),
    ("w_oovv", 0.25,    "ijba,ijba",            ("t2",)),
    # l1 . R1
    ("f_vv",   1.0,     "ba,ia,ib",             ("t1", "l1")),
    ("f_oo",  -1.0,     "ij,ia,ja",             ("t1", "l1")),
    ("f_vo",   1.0,     "ai,ia",                ("l1",)),
    ("f_ov",  -1.0,     "jb,ja,ib,ia",          ("t1", "t1", "l1")),
    ("f_ov",   1.0,     "ia,ijab,jb",           ("t2", "l1")),
    ("w_ovvv", 1.0,     "jbca,ia,jc,ib",        ("t1", "t1", "l1")),
    ("w_ovvv", 0.5,     "icba,ijba,jc",         ("t2", "l1")),
    ("w_ovvo", 1.0,     "jabi,jb,ia",           ("t1", "l1")),
    ("w_oovv", 1.0,     "jkca,ia,jb,kc,ib",     ("t1", "t1", "t1", "l1")),
    ("w_oovv", -0.5,    "jkbc,ic,jkba,ia",      ("t1", "t2", "l1")),
    ("w_oovv", -0.5,    "kjcb,ja,kicb,ia",      ("t1", "t2", "l1")),
    ("w_oovv", 1.0,     "jiba,jb,ikac,kc",      ("t1", "t2", "l1")),
    ("w_oovo", 1.0,     "jkbi,kb,ja,ia",        ("t1", "t1", "l1")),
    ("w_oovo", -0.5,    "ijak,ijab,kb",         ("t2", "l1")),
    # (1/4) l2 . R2
    ("f_vv",   0.5,     "ba,ijac,ijbc",         ("t2", "l2")),
    ("f_oo",  -0.5,     "ik,ijba,kjba",         ("t2", "l2")),
    ("f_ov",  -0.5,     "ic,kc,ijba,kjba",      ("t1", "t2", "l2")),
    ("f_ov",  -0.5,     "ia,ib,jkac,jkbc",      ("t1", "t2", "l2")),
    ("w_vvvv", 0.25,    "cbad,ja,id,jicb",      ("t1", "t1", "l2")),
    ("w_vvvv", 0.125,   "dcba,ijba,ijdc",       ("t2", "l2")),
    ("w_vvvo", -0.5,    "baci,jc,ijba",         ("t1", "l2")),
    ("w_vvoo", 0.25,    "baij,ijba",            ("l2",)),
    ("w_ovvv", -0.5,    "icdb,ia,jb,kd,kjac",   ("t1", "t1", "t1", "l2")),
    ("w_ovvv", 1.0,     "kacd,jd,kicb,ijba",    ("t1", "t2", "l2")),
    ("w_ovvv", 0.25,    "kcba,kd,ijba,ijcd",    ("t1", "t2", "l2")),
    ("w_ovvv", -0.5,    "kadc,kc,ijbd,ijba",    ("t1", "t2", "l2")),
    ("w_ovvo", 1.0,     "kcaj,ia,kb,ijcb",      ("t1", "t1", "l2")),
    ("w_ovvo", 1.0,     "ibaj,ikac,kjcb",       ("t2", "l2")),
    ("w_ovoo", 0.5,     "kbij,ka,ijba",         ("t1", "l2")),
    ("w_oovv", 0.25,    "jlca,ia,jb,kc,ld,kibd", ("t1", "t1", "t1", "t1", "l2")),
    ("w_oovv", -0.125,  "jkda,ia,ld,jkcb,ilcb", ("t1", "t1", "t2", "l2")),
    ("w_oovv", -1.0,    "kldc,jc,la,kidb,ijba", ("t1", "t1", "t2", "l2")),
    ("w_oovv", 0.5,     "licd,lc,kd,ijba,jkba", ("t1", "t1", "t2", "l2")),
    ("w_oovv", -0.125,  "klba,kc,ld,ijba,ijdc", ("t1", "t1", "t2", "l2")),
    ("w_oovv", 0.5,     "lkcd,ka,lc,ijdb,ijba", ("t1", "t1", "t2", "l2")),
    ("w_oovv", -0.25,   "ijab,klbc,ijad,kldc",  ("t2", "t2", "l2")),
    ("w_oovv", 0.0625,  "ijba,klba,ijdc,kldc",  ("t2", "t2", "l2")),
    ("w_oovv", 0.25,    "jiba,ikba,jldc,kldc",  ("t2", "t2", "l2")),
    ("w_oovv", 0.5,     "ljdb,jiba,lkdc,ikac",  ("t2", "t2", "l2")),
    ("w_oovo", -0.5,    "ijcl,ia,jb,kc,lkab",   ("t1", "t1", "t1", "l2")),
    ("w_oovo", -0.25,   "ijak,la,ijcb,klcb",    ("t1", "t2", "l2")),
    ("w_oovo", -1.0,    "jkai,kc,jlab,ilcb",    ("t1", "t2", "l2")),
    ("w_oovo", 0.5,     "ilck,lc,ijba,kjba",    ("t1", "t2", "l2")),
    ("w_oooo", -0.25,   "klij,lb,ka,ijba",      ("t1", "t1", "l2")),
    ("w_oooo", 0.125,   "klij,klba,ijba",       ("t2", "l2")),
]


@dataclass
class Rdm1:
    gamma: np.ndarray      # spin-orbital, <a_p^+ a_q>
    kind: str
    symmetrized: bool = False

    @property
    def n_so(self):
        return self.gamma.shape[0]

    def symmetrize(self):
        return Rdm1(0.5 * (self.gamma + self.gamma.T), self.kind, True)

    def trace(self):
        return float(self.gamma.trace())


@dataclass
class Rdm2:
    gamma: np.ndarray      # spin-orbital, <a_p^+ a_q^+ a_s a_r> at [p,q,r,s]
    kind: str

    @property
    def n_so(self):
        return self.gamma.shape[0]

    def pair_trace(self):
        return float(einsum("pqpq->", self.gamma))

    def partial_trace(self):
        return einsum("pqrq->pr", self.gamma)


def _amp_arrays(amps):
    return {"t1": amps.t1, "t2": amps.t2, "l1": amps.l1, "l2": amps.l2}


def _block_slices(name, o, v):
    return tuple(o if ch == "o" else v for ch in name.split("_")[1])


def lagrangian_corr_flat(sys, amps):
    """E_corr + sum lambda.R evaluated from the flat term table (test hook)."""
    arrays = _amp_arrays(amps)
    o, v = sys.o, sys.v
    total = 0.0
    for name, coef, subs, ops in LAGRANGIAN_TERMS:
        if any(arrays[op] is None for op in ops):
            continue
        block = sys.f if name.startswith("f") else sys.w
        target = block[_block_slices(name, o, v)]
        total += coef * einsum(subs + "->", target, *[arrays[op] for op in ops])
    return float(total)


def _lagrangian_gradients(amps):
    """(dL/df, dL/dW) of the correlation Lagrangian at fixed amplitudes."""
    t1 = amps.t1
    no, nv = t1.shape
    n = no + nv
    o, v = slice(0, no), slice(no, n)
    arrays = _amp_arrays(amps)
    gf = np.zeros((n, n))
    gw = np.zeros((n, n, n, n))
    for name, coef, subs, ops in LAGRANGIAN_TERMS:
        if any(arrays[op] is None for op in ops):
            continue
        parts = subs.split(",")
        grad_subs = ",".join(parts[1:]) + "->" + parts[0]
        grad = coef * einsum(grad_subs, *[arrays[op] for op in ops])
        target = gf if name.startswith("f") else gw
        target[_block_slices(name, o, v)] += grad
    return gf, gw


def cc_rdm1(amps):
    """Lambda-state (response) 1-RDM gamma_pq = <(1+L)e^-T a_p^+ a_q e^T>.

    Non-symmetric in general; use .symmetrize() where pointwise positivity
    matters (real-space densities).
    """
    if not amps.has_lambda:
        raise ValueError("cc_rdm1 needs converged Lambda amplitudes")
    no, nv = amps.t1.shape
    gf, _ = _lagrangian_gradients(amps)
    gamma = gf
    gamma[:no, :no] += np.eye(no)
    return Rdm1(gamma=gamma, kind="cc_response")


def cc_rdm2(amps):
    """Lambda-state 2-RDM Gamma[p,q,r,s] = <(1+L)e^-T a_p^+ a_q^+ a_s a_r e^T>."""
    if not amps.has_lambda:
        raise ValueError("cc_rdm2 needs converged Lambda amplitudes")
    no, nv = amps.t1.shape
    n = no + nv
    gf, gw = _lagrangian_gradients(amps)
    conn = (gw - gw.transpose(1, 0, 2, 3) - gw.transpose(0, 1, 3, 2)
            + gw.transpose(1, 0, 3, 2))
    docc = np.zeros((n, n))
    docc[:no, :no] = np.eye(no)
    gam = conn
    gam += einsum("pr,qs->pqrs", gf, docc)
    gam -= einsum("qr,ps->pqrs", gf, docc)
    gam -= einsum("ps,qr->pqrs", gf, docc)
    gam += einsum("qs,pr->pqrs", gf, docc)
    gam += einsum("pr,qs->pqrs", docc, docc) - einsum("ps,qr->pqrs", docc, docc)
    return Rdm2(gamma=gam, kind="cc_response")


def hf_rdm1(n_occ, n_so):
    gamma = np.zeros((n_so, n_so))
    gamma[:n_occ, :n_occ] = np.eye(n_occ)
    return Rdm1(gamma=gamma, kind="hf", symmetrized=True)


def xccsd_rdm1(amps, order=2):
    """Expectation-value (T-only) 1-RDM, commutator expansion through order 2.

    order=1 keeps the terms linear in T; order=2 adds the quadratic ones.
    The result is symmetric by construction.
    """
    if order not in (1, 2):
        raise ValueError("unsupported XCCSD truncation order %d" % order)
    t1, t2 = amps.t1, amps.t2
    no, nv = t1.shape
    n = no + nv
    gamma = np.zeros((n, n))
    gamma[:no, :no] = np.eye(no)
    gamma[:no, no:] += t1
    gamma[no:, :no] += t1.T
    if order == 2:
        gamma[:no, :no] -= einsum("ie,je->ij", t1, t1)
        gamma[:no, :no] -= 0.5 * einsum("imef,jmef->ij", t2, t2)
        gamma[no:, no:] += einsum("ma,mb->ab", t1, t1)
        gamma[no:, no:] += 0.5 * einsum("mnae,mnbe->ab", t2, t2)
        cross = einsum("me,imae->ia", t1, t2)
        gamma[:no, no:] += cross
        gamma[no:, :no] += cross.T
    return Rdm1(gamma=gamma, kind="xccsd", symmetrized=True)


def mp2_rdm1(sys):
    """Unrelaxed MP2 1-RDM (Lambda2 = T2, Lambda1 = 0 limit)."""
    from .gauge import AmplitudeSet
    t2, _ = mp2_amplitudes(sys)
    t1 = np.zeros((sys.n_occ, sys.n_virt))
    l1, l2 = np.zeros_like(t1), t2.copy()
    amps = AmplitudeSet(t1=t1, t2=t2, l1=l1, l2=l2, gauge="canonical")
    g = cc_rdm1(amps)
    return Rdm1(gamma=g.gamma, kind="mp2")


def one_body_expectation(rdm1, o_pq):
    """<O> = sum_pq o_pq gamma_pq for a spin-orbital operator matrix."""
    if o_pq.shape != rdm1.gamma.shape:
        raise ValueError("operator/density dimension mismatch")
    return float(einsum("pq,pq->", o_pq, rdm1.gamma))


def spin_trace_1(gamma_so):
    """Spin-orbital 1-RDM -> spatial (spin-traced) matrix."""
    return gamma_so[0::2, 0::2] + gamma_so[1::2, 1::2]


def spin_trace_2(gamma_so):
    """Spin-orbital 2-RDM -> spatial tensor with same-point spins paired (p,r)."""
    n = gamma_so.shape[0] // 2
    out = np.zeros((n, n, n, n))
    for s1 in (0, 1):
        for s2 in (0, 1):
            out += gamma_so[s1::2, s2::2, s1::2, s2::2]
    return out


def natural_occupations(rdm1):
    """Eigenvalues of the symmetrized spin-traced 1-RDM, descending."""
    g = spin_trace_1(rdm1.gamma)
    g = 0.5 * (g + g.T)
    return np.sort(np.linalg.eigvalsh(g))[::-1]


def dipole(rdm1, mo_dipole_so, mol, origin, integrals_origin=None):
    """Total dipole: nuclear part minus the 1-RDM-contracted electronic part.

    `origin` must be the origin the dipole integrals were taken about; pass
    `integrals_origin` to have that checked.
    """
    if integrals_origin is not None and np.abs(np.asarray(integrals_origin)
                                               - np.asarray(origin)).max() > 1e-12:
        raise ValueError("multipole origin does not match the integral origin")
    nuc = nuclear_dipole(mol, origin)
    el = np.array([one_body_expectation(rdm1, mo_dipole_so[w]) for w in range(3)])
    return nuc - el


def quadrupole(rdm1, mo_quadrupole_so, mol, origin):
    """Total second-moment tensor about `origin` as a symmetric 3x3 matrix."""
    nuc = nuclear_quadrupole(mol, origin)
    el = np.array([one_body_expectation(rdm1, mo_quadrupole_so[k]) for k in range(6)])
    packed = nuc - el
    out = np.zeros((3, 3))
    for k, (w, x) in enumerate(((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))):
        out[w, x] = out[x, w] = packed[k]
    return out


def frobenius_error(alpha_pred, alpha_ref):
    return float(np.sqrt(((np.asarray(alpha_pred) - np.asarray(alpha_ref)) ** 2).sum()))


def ao_values(basis, points):
    """Contracted s-Gaussian values on a point set, shape (n_points, n_ao)."""
    points = np.asarray(points, dtype=float)
    out = np.empty((points.shape[0], basis.n_ao))
    for k, sh in enumerate(basis.shells):
        r2 = ((points - sh.center) ** 2).sum(axis=1)
        out[:, k] = np.exp(-np.outer(r2, sh.exps)) @ sh.coefs
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite basis value on grid")
    return out


def mo_values(c, basis, points):
    return ao_values(basis, points) @ c


def density_on_grid(rdm1, c, basis, points):
    """rho(r) from the spin-traced symmetrized 1-RDM on arbitrary points."""
    g = rdm1.gamma if rdm1.symmetrized else 0.5 * (rdm1.gamma + rdm1.gamma.T)
    gsp = spin_trace_1(g)
    psi = mo_values(c, basis, points)
    return einsum("pq,xp,xq->x", gsp, psi, psi)


def pair_density(rdm2, c, basis, r_ref, points):
    """Pi(r, r_ref): spin-traced pair density against a fixed reference point."""
    import warnings

    gsp = spin_trace_2(rdm2.gamma)
    psi = mo_values(c, basis, np.asarray(points, dtype=float))
    psi_ref = mo_values(c, basis, np.asarray(r_ref, dtype=float)[None, :])[0]
    if np.abs(psi_ref).max() < 1e-12:
        warnings.warn("pair-density reference point lies outside the "
                      "finite-value region of the basis")
    m_ref = np.outer(psi_ref, psi_ref)
    mat = einsum("pqrs,qs->pr", gsp, m_ref)
    return einsum("pr,xp,xr->x", mat, psi, psi)


def on_top_pair_density(rdm2, c, basis, points):
    """Pi(r, r): diagonal of the pair density."""
    gsp = spin_trace_2(rdm2.gamma)
    psi = mo_values(c, basis, points)
    return einsum("pqrs,xp,xq,xr,xs->x", gsp, psi, psi, psi, psi)


@dataclass
class PolarizabilityResult:
    alpha: np.ndarray          # symmetrized 3x3 tensor
    asymmetry: float           # max |alpha - alpha^T| before symmetrization
    field_step: float
    method: str


def ff_dipole(sys, dip_so, mu_nuc, fvec, method="ccsd", tol=1e-10, max_iter=200):
    """Frozen-orbital dipole and total energy at a finite field."""
    pert = sys.apply_field(dip_so, mu_nuc, fvec)
    if method == "ccsd":
        cc = solve_ccsd(pert, tol=tol, max_iter=max_iter)
        cc = solve_lambda(pert, cc, tol=tol, max_iter=max_iter)
        gamma = cc_rdm1(cc.amps)
        energy = cc.e_total
    elif method == "mp2":
        gamma = mp2_rdm1(pert)
        t2, e2 = mp2_amplitudes(pert)
        energy = pert.e_ref + e2
    elif method == "hf":
        gamma = hf_rdm1(pert.n_occ, pert.n_so)
        energy = pert.e_ref
    else:
        raise ValueError("unknown method '%s'" % method)
    el = np.array([one_body_expectation(gamma, dip_so[w]) for w in range(3)])
    return mu_nuc - el, energy


def polarizability_ff(sys, dip_so, mu_nuc, field_step=1e-3, method="ccsd",
                      tol=1e-10, max_iter=200):
    """Static frozen-orbital polarizability by central finite field.

    Orbitals stay fixed at F = 0; amplitudes are re-solved at +/- h along
    each Cartesian direction and alpha is the derivative of the Lambda-state
    dipole.  The raw tensor is symmetrized; the discarded asymmetry is kept
    for the provenance record.
    """
    if not 1e-4 <= field_step <= 1e-2:
        raise ValueError("field step %g outside the supported [1e-4, 1e-2] window"
                         % field_step)
    alpha = np.zeros((3, 3))
    for beta in range(3):
        fvec = np.zeros(3)
        fvec[beta] = field_step
        mu_p, _ = ff_dipole(sys, dip_so, mu_nuc, fvec, method, tol, max_iter)
        mu_m, _ = ff_dipole(sys, dip_so, mu_nuc, -fvec, method, tol, max_iter)
        alpha[:, beta] = (mu_p - mu_m) / (2.0 * field_step)
    asym = float(np.abs(alpha - alpha.T).max())
    return PolarizabilityResult(alpha=0.5 * (alpha + alpha.T), asymmetry=asym,
                                field_step=field_step, method=method)


def forces_fd(mol, basis_name="sto-3g", method="ccsd", step=1e-3,
              tol=1e-10, max_iter=200):
    """Nuclear forces by central differences with a full re-solve per point."""
    from .pipeline import total_energy

    forces = np.zeros((mol.n_atoms, 3))
    for a in range(mol.n_atoms):
        for w in range(3):
            es = []
            for sign in (+1.0, -1.0):
                atoms = [(z, pos.copy()) for z, pos in mol.atoms]
                atoms[a][1][w] += sign * step
                from .chem import Molecule
                es.append(total_energy(Molecule(atoms, mol.charge), basis_name,
                                       method, tol=tol, max_iter=max_iter))
            forces[a, w] = -(es[0] - es[1]) / (2.0 * step)
    return forces


@dataclass
class PropertyReport:
    e_total: float
    dipole: np.ndarray = None
    quadrupole: np.ndarray = None
    polarizability: np.ndarray = None
    forces: np.ndarray = None
    natural_occupations: np.ndarray = None
    provenance: dict = field(default_factory=dict)

    def as_text(self):
        lines = ["e_total: %.12f" % self.e_total]
        if self.dipole is not None:
            lines.append("dipole: " + " ".join("%.10f" % x for x in self.dipole))
        if self.quadrupole is not None:
            lines.append("quadrupole: " + " ".join("%.10f" % x
                                                   for x in self.quadrupole.ravel()))
        if self.polarizability is not None:
            lines.append("polarizability: " + " ".join("%.10f" % x
                                                       for x in self.polarizability.ravel()))
        if self.forces is not None:
            lines.append("forces: " + " ".join("%.10f" % x for x in self.forces.ravel()))
        if self.natural_occupations is not None:
            lines.append("natural_occupations: "
                         + " ".join("%.10f" % x for x in self.natural_occupations))
        for key in sorted(self.provenance):
            lines.append("provenance.%s: %s" % (key, self.provenance[key]))
        return "\n".join(lines) + "\n"


def write_cube(path, mol, values, origin, axes, shape, comment="ccrs cube"):
    """Write scalar field data in Gaussian cube format (z fastest)."""
    values = np.asarray(values, dtype=float).reshape(shape)
    with open(path, "w") as fh:
        fh.write(comment + "\n")
        fh.write("scalar field on a regular grid\n")
        fh.write("%5d %11.6f %11.6f %11.6f\n"
                 % (mol.n_atoms, origin[0], origin[1], origin[2]))
        for k in range(3):
            fh.write("%5d %11.6f %11.6f %11.6f\n"
                     % (shape[k], axes[k][0], axes[k][1], axes[k][2]))
        for z, pos in mol.atoms:
            fh.write("%5d %11.6f %11.6f %11.6f %11.6f\n"
                     % (z, float(z), pos[0], pos[1], pos[2]))
        flat = values.ravel()
        for start in range(0, flat.size, 6):
            fh.write("".join("%13.5e" % x for x in flat[start:start + 6]) + "\n")


def regular_grid(origin, axes, shape):
    """Points of a regular cube-file grid, x slowest / z fastest."""
    pts = []
    for i in range(shape[0]):
        for j in range(shape[1]):
            for k in range(shape[2]):
                pts.append(np.asarray(origin)
                           + i * np.asarray(axes[0])
                           + j * np.asarray(axes[1])
                           + k * np.asarray(axes[2]))
    return np.array(pts)
