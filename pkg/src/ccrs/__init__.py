"""Coupled-cluster response-state engine with a symmetry-constrained surrogate.

Computes CCSD right-hand (T) and left-hand (Lambda) amplitudes for small
closed-shell systems, reconstructs energies, forces, multipoles, densities,
pair densities, and polarizabilities from them, and trains a surrogate that
predicts the amplitudes directly from localized Hartree-Fock orbitals.
"""

__version__ = "0.1.0"

from .chem import (BasisSet, IntegralSet, Molecule, build_basis,
                   compute_integrals, ingest_fcidump, parse_xyz,
                   parse_xyz_frames)
from .ccsd import (CcResult, SpinOrbitalSystem, lagrangian_value,
                   mp2_amplitudes, mp2_lambda, solve_ccsd, solve_lambda)
from .errors import ContainerError, ConvergenceError, DegenerateGapError
from .fci import fci_solve
from .gauge import (AmplitudeSet, GaugeSpec, canonicalize, localize,
                    make_gauge, transform_amplitudes)
from .response import (PropertyReport, Rdm1, Rdm2, cc_rdm1, cc_rdm2, dipole,
                       density_on_grid, forces_fd, frobenius_error,
                       natural_occupations, on_top_pair_density,
                       one_body_expectation, pair_density, polarizability_ff,
                       quadrupole, xccsd_rdm1)
from .scf import ScfResult, mo_transform, solve_rhf, spin_orbital_expand
from .surrogate import (FeatureConfig, SurrogateModel, amplitude_loss,
                        build_features, evaluate, init_model, predict, train)

__all__ = [name for name in dir() if not name.startswith("_")]
