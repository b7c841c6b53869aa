"""Separately localized occupied/virtual orbital gauge and amplitude transforms.

Localization is Foster-Boys by 2x2 Jacobi sweeps on the MO dipole matrices.
Canonicalization fixes the orbital phases and ordering so that amplitude
tensors are reproducible across equivalent runs; both are folded into the
stored rotation matrices.
"""

import math
from dataclasses import dataclass, field
import numpy as np

from .contract import einsum
from .scf import spin_expand_matrix



@dataclass
class AmplitudeSet:
    """CCSD response-state amplitudes in spin-orbital form.

    t2/l2 are stored fully antisymmetrized over (i,j) and (a,b); the
    constructor enforces this by projection.  l1/l2 keep the occupied index
    first (l1[i,a] stores lambda_a^i).
    """
    t1: np.ndarray
    t2: np.ndarray
    l1: np.ndarray = None
    l2: np.ndarray = None
    gauge: str = "canonical"
    basis_id: str = ""

    def __post_init__(self):
        self.t2 = antisymmetrize_pairs(self.t2)
        if self.l2 is not None:
            self.l2 = antisymmetrize_pairs(self.l2)

    @property
    def has_lambda(self):
        return self.l1 is not None and self.l2 is not None

    def validate(self, bound=10.0):
        for name in ("t1", "t2", "l1", "l2"):
            x = getattr(self, name)
            if x is None:
                continue
            if not np.all(np.isfinite(x)):
                raise ValueError("non-finite entries in %s" % name)
            if np.abs(x).max(initial=0.0) > bound:
                raise ValueError("|%s| exceeds the diagnostic bound %g" % (name, bound))
        return self

    def copy(self):
        return AmplitudeSet(self.t1.copy(), self.t2.copy(),
                            None if self.l1 is None else self.l1.copy(),
                            None if self.l2 is None else self.l2.copy(),
                            self.gauge, self.basis_id)


def antisymmetrize_pairs(x):
    """Project a 4-index tensor on its (01)(23)-antisymmetric part."""
    return 0.25 * (x - x.transpose(1, 0, 2, 3)
                   - x.transpose(0, 1, 3, 2) + x.transpose(1, 0, 3, 2))


@dataclass
class LocalizedBlock:
    u: np.ndarray
    objective: float
    n_sweeps: int
    converged: bool


@dataclass
class GaugeSpec:
    """Gauge data for one ScfResult: rotations plus canonicalization record."""
    u_occ: np.ndarray
    u_virt: np.ndarray
    phase_occ: np.ndarray = None       # signs applied during canonicalization
    phase_virt: np.ndarray = None
    order_occ: np.ndarray = None       # permutation applied during canonicalization
    order_virt: np.ndarray = None
    centroids_occ: np.ndarray = None   # absolute <r> per localized orbital (bohr)
    centroids_virt: np.ndarray = None
    spreads_occ: np.ndarray = None     # <r^2> - <r>^2 (bohr^2)
    spreads_virt: np.ndarray = None
    c_occ: np.ndarray = None           # localized AO coefficients
    c_virt: np.ndarray = None
    converged: bool = True
    canonical_form: bool = False

    @property
    def centroids_so_occ(self):
        return np.repeat(self.centroids_occ, 2, axis=0)

    @property
    def centroids_so_virt(self):
        return np.repeat(self.centroids_virt, 2, axis=0)

    @property
    def spreads_so_occ(self):
        return np.repeat(self.spreads_occ, 2)

    @property
    def spreads_so_virt(self):
        return np.repeat(self.spreads_virt, 2)


def localize(scf, ints, space, tol=1e-12, max_sweeps=200):
    """Foster-Boys localization of one orbital space by Jacobi 2x2 sweeps.

    Maximizes sum_p |<r>_p|^2, sweeping pairs p<q in fixed order with the
    closed-form 4-theta rotation angle, branch chosen to maximize the
    objective.  Accepted rotations never lower the objective; convergence is
    declared when the best single-pair gain in a sweep drops below tol.
    """
    if space == "occupied":
        cols = scf.c[:, :scf.n_occ]
    elif space == "virtual":
        cols = scf.c[:, scf.n_occ:]
    else:
        raise ValueError("space must be 'occupied' or 'virtual'")
    n = cols.shape[1]
    u = np.eye(n)
    d = np.array([cols.T @ ints.dipole[w] @ cols for w in range(3)])
    if n < 2:
        return LocalizedBlock(u=u, objective=_boys_objective(d), n_sweeps=0,
                              converged=True)
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_gain = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                uvec = d[:, p, p] - d[:, q, q]
                vvec = d[:, p, q]
                a4 = 0.25 * uvec @ uvec - vvec @ vvec
                b4 = uvec @ vvec
                gain = math.hypot(a4, b4) - a4
                if gain <= tol:
                    continue
                max_gain = max(max_gain, gain)
                theta = 0.25 * math.atan2(b4, a4)
                _rotate_pair(u, d, p, q, theta)
        if max_gain < tol:
            converged = True
            break
    return LocalizedBlock(u=u, objective=_boys_objective(d), n_sweeps=sweeps,
                          converged=converged)


def _boys_objective(d):
    return float(sum((np.diagonal(d[w]) ** 2).sum() for w in range(3)))


def _rotate_pair(u, d, p, q, theta):
    c, s = math.cos(theta), math.sin(theta)
    for m in (u,):
        mp = c * m[:, p] + s * m[:, q]
        mq = -s * m[:, p] + c * m[:, q]
        m[:, p], m[:, q] = mp, mq
    for w in range(3):
        dw = d[w]
        rp = c * dw[:, p] + s * dw[:, q]
        rq = -s * dw[:, p] + c * dw[:, q]
        dw[:, p], dw[:, q] = rp, rq
        rp = c * dw[p, :] + s * dw[q, :]
        rq = -s * dw[p, :] + c * dw[q, :]
        dw[p, :], dw[q, :] = rp, rq


def make_gauge(scf, ints, tol=1e-12, max_sweeps=200, canonical=True):
    """Localize both spaces and (optionally) canonicalize the result."""
    occ = localize(scf, ints, "occupied", tol=tol, max_sweeps=max_sweeps)
    virt = localize(scf, ints, "virtual", tol=tol, max_sweeps=max_sweeps)
    gauge = GaugeSpec(u_occ=occ.u, u_virt=virt.u,
                      converged=occ.converged and virt.converged)
    _fill_geometry(gauge, scf, ints)
    if canonical:
        gauge = canonicalize(gauge)
    return gauge


def _fill_geometry(gauge, scf, ints):
    for space, u in (("occ", gauge.u_occ), ("virt", gauge.u_virt)):
        cols = scf.c[:, :scf.n_occ] if space == "occ" else scf.c[:, scf.n_occ:]
        c_loc = cols @ u
        cen = np.array([[c_loc[:, p] @ ints.dipole[w] @ c_loc[:, p] for w in range(3)]
                        for p in range(c_loc.shape[1])])
        r2 = np.array([c_loc[:, p] @ (ints.quadrupole[0] + ints.quadrupole[3]
                                      + ints.quadrupole[5]) @ c_loc[:, p]
                       for p in range(c_loc.shape[1])])
        spread = r2 - (cen ** 2).sum(axis=1)
        cen = cen + ints.origin
        setattr(gauge, "c_" + space, c_loc)
        setattr(gauge, "centroids_" + space, cen)
        setattr(gauge, "spreads_" + space, spread)


def canonicalize(gauge, tie_tol=1e-9):
    """Fix phases and orbital order of a localized gauge.

    Phase: the largest-magnitude AO coefficient of each orbital is made
    positive, ties (within 1e-12 of the maximum) broken by lowest AO index.
    Order: within each space, sort lexicographically by centroid (x, y, z)
    with the spread as final tie-break; an exact tie on all four keys is an
    error.  Both operations are folded into the stored rotation matrices, so
    transform_amplitudes needs no extra bookkeeping.
    """
    if gauge.c_occ is None:
        raise ValueError("gauge carries no localized coefficients; "
                         "build it via make_gauge")
    out = GaugeSpec(u_occ=gauge.u_occ.copy(), u_virt=gauge.u_virt.copy(),
                    converged=gauge.converged, canonical_form=True)
    for space in ("occ", "virt"):
        u = getattr(out, "u_" + space)
        c = getattr(gauge, "c_" + space).copy()
        cen = getattr(gauge, "centroids_" + space).copy()
        spr = getattr(gauge, "spreads_" + space).copy()
        n = c.shape[1]
        phase = np.ones(n)
        for p in range(n):
            mags = np.abs(c[:, p])
            lead = np.flatnonzero(mags >= mags.max() - 1e-12)[0]
            if c[lead, p] < 0:
                phase[p] = -1.0
        c = c * phase
        u = u * phase
        keys = [tuple(np.round(cen[p] / tie_tol).astype(np.int64))
                + (int(round(spr[p] / tie_tol)),) for p in range(n)]
        if len(set(keys)) != n:
            raise ValueError("exact centroid+spread tie in the %s space; "
                             "cannot order orbitals deterministically" % space)
        order = np.array(sorted(range(n), key=lambda p: keys[p]), dtype=int)
        setattr(out, "u_" + space, u[:, order])
        setattr(out, "c_" + space, c[:, order])
        setattr(out, "centroids_" + space, cen[order])
        setattr(out, "spreads_" + space, spr[order])
        setattr(out, "phase_" + space, phase[order])
        setattr(out, "order_" + space, order)
    return out


def transform_amplitudes(amps, gauge, direction):
    """Rotate amplitude tensors between the canonical and localized gauges.

    Every occupied index is contracted with U_occ and every virtual index
    with U_virt (transposed for to_canonical); the same spatial rotation is
    applied to both spin blocks.
    """
    if direction == "to_localized":
        if amps.gauge != "canonical":
            raise ValueError("amplitudes are already localized")
        uo = spin_expand_matrix(gauge.u_occ)
        uv = spin_expand_matrix(gauge.u_virt)
        new_gauge = "localized"
    elif direction == "to_canonical":
        if amps.gauge != "localized":
            raise ValueError("amplitudes are already canonical")
        uo = spin_expand_matrix(gauge.u_occ).T
        uv = spin_expand_matrix(gauge.u_virt).T
        new_gauge = "canonical"
    else:
        raise ValueError("direction must be to_localized or to_canonical")
    if amps.t1.shape != (uo.shape[0], uv.shape[0]):
        raise ValueError("amplitude/gauge dimension mismatch")

    def one(x):
        return einsum("iI,aA,ia->IA", uo, uv, x)

    def two(x):
        return einsum("iI,jJ,aA,bB,ijab->IJAB", uo, uo, uv, uv, x)

    return AmplitudeSet(t1=one(amps.t1), t2=two(amps.t2),
                        l1=None if amps.l1 is None else one(amps.l1),
                        l2=None if amps.l2 is None else two(amps.l2),
                        gauge=new_gauge, basis_id=amps.basis_id)
