"""End-to-end drivers composing integrals -> SCF -> gauge -> CC solves."""

from dataclasses import dataclass

import numpy as np

from . import chem, scf as scf_mod
from .ccsd import mp2_amplitudes, solve_ccsd, solve_lambda
from .gauge import make_gauge, transform_amplitudes
from .scf import spin_expand_matrix


@dataclass
class System:
    """Everything a single molecule needs downstream of the SCF."""
    mol: object            # None for FCIDUMP systems
    basis: object          # None for FCIDUMP systems
    ints: object
    scf: object
    mo: object
    so: object             # SpinOrbitalSystem
    dip_so: np.ndarray = None
    quad_so: np.ndarray = None
    mu_nuc: np.ndarray = None
    origin: np.ndarray = None


def build_system(mol, basis_name="sto-3g", origin=None, scf_opts=None):
    """Embedded-basis route: integrals, RHF, MO transform, spin orbitals."""
    basis = chem.build_basis(mol, basis_name)
    ints = chem.compute_integrals(mol, basis, origin=origin)
    res = scf_mod.solve_rhf(ints, mol.n_electrons, **(scf_opts or {}))
    if not res.converged:
        from .errors import ConvergenceError
        raise ConvergenceError("SCF did not converge in %d iterations" % res.n_iter)
    mo = scf_mod.mo_transform(ints, res.c)
    so = scf_mod.spin_orbital_expand(mo, res.n_occ)
    dip_so = np.array([spin_expand_matrix(mo.dipole[w]) for w in range(3)])
    quad_so = np.array([spin_expand_matrix(mo.quadrupole[k]) for k in range(6)])
    return System(mol=mol, basis=basis, ints=ints, scf=res, mo=mo, so=so,
                  dip_so=dip_so, quad_so=quad_so,
                  mu_nuc=chem.nuclear_dipole(mol, ints.origin),
                  origin=ints.origin)


def build_fcidump_system(text, scf_opts=None):
    """FCIDUMP route: MO-form integrals straight into the spin-orbital system."""
    ints, nelec, norb = chem.ingest_fcidump(text)
    res = scf_mod.solve_rhf(ints, nelec, **(scf_opts or {}))
    mo = scf_mod.mo_transform(ints, res.c)
    so = scf_mod.spin_orbital_expand(mo, res.n_occ)
    return System(mol=None, basis=None, ints=ints, scf=res, mo=mo, so=so)


def total_energy(mol, basis_name="sto-3g", method="ccsd", tol=1e-10, max_iter=200):
    """Total energy of an embedded-basis molecule at the requested level."""
    system = build_system(mol, basis_name)
    if method == "hf":
        return system.scf.e_hf
    if method == "mp2":
        _, e2 = mp2_amplitudes(system.so)
        return system.so.e_ref + e2
    if method == "ccsd":
        cc = solve_ccsd(system.so, tol=tol, max_iter=max_iter)
        return cc.e_total
    raise ValueError("unknown method '%s'" % method)


def run_response_state(system, tol=1e-10, max_iter=200, with_gauge=True,
                       gauge_opts=None):
    """Solve T and Lambda, optionally attaching the canonicalized local gauge.

    Returns (cc_result_with_lambda, gauge_or_none, localized_amps_or_none).
    """
    cc = solve_ccsd(system.so, tol=tol, max_iter=max_iter)
    cc = solve_lambda(system.so, cc, tol=tol, max_iter=max_iter)
    gauge = None
    loc = None
    if with_gauge and system.mol is not None:
        gauge = make_gauge(system.scf, system.ints, **(gauge_opts or {}))
        loc = transform_amplitudes(cc.amps, gauge, "to_localized")
    return cc, gauge, loc
