"""Molecules, s-type Gaussian basis sets, AO integrals, and FCIDUMP input.

The embedded integral engine is deliberately limited to contracted s-type
Gaussians on H and He; richer chemistry enters through FCIDUMP files that
already carry integrals in an orthonormal MO basis.
"""

import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

BOHR_PER_ANGSTROM = 1.8897259886

ELEMENTS = {"H": 1, "He": 2}

# STO-3G s shells.  Contraction coefficients refer to normalized primitives;
# the contracted function is renormalized once more when the shell is built.
STO3G = {
    1: ((3.42525091, 0.62391373, 0.16885540),
        (0.15432897, 0.53532814, 0.44463454)),
    2: ((6.36242139, 1.15892300, 0.31364979),
        (0.15432897, 0.53532814, 0.44463454)),
}


class ParseError(ValueError):
    pass


@dataclass
class Molecule:
    """Nuclear frame: list of (Z, xyz) with positions in bohr."""
    atoms: list            # [(Z, np.ndarray(3))]
    charge: int = 0

    def __post_init__(self):
        if not self.atoms:
            raise ValueError("molecule has no atoms")
        atoms = []
        for z, pos in self.atoms:
            pos = np.asarray(pos, dtype=float)
            if pos.shape != (3,) or not np.all(np.isfinite(pos)):
                raise ValueError("atom position must be a finite 3-vector")
            atoms.append((int(z), pos))
        self.atoms = atoms
        if self.n_electrons % 2 != 0:
            raise ValueError(
                "odd electron count %d (restricted closed-shell only)"
                % self.n_electrons)
        for i in range(len(self.atoms)):
            for j in range(i):
                if np.linalg.norm(self.atoms[i][1] - self.atoms[j][1]) < 1e-10:
                    raise ValueError("atoms %d and %d coincide" % (j, i))

    @property
    def n_electrons(self):
        return sum(z for z, _ in self.atoms) - self.charge

    @property
    def n_atoms(self):
        return len(self.atoms)

    def positions(self):
        return np.array([pos for _, pos in self.atoms])

    def charges(self):
        return np.array([z for z, _ in self.atoms], dtype=float)

    def translated(self, shift):
        shift = np.asarray(shift, dtype=float)
        return Molecule([(z, pos + shift) for z, pos in self.atoms], self.charge)

    def rotated(self, rot):
        rot = np.asarray(rot, dtype=float)
        return Molecule([(z, rot @ pos) for z, pos in self.atoms], self.charge)

    def nuclear_charge_center(self):
        zs = self.charges()
        return (zs[:, None] * self.positions()).sum(axis=0) / zs.sum()


@dataclass
class Shell:
    """One contracted s-type shell: center plus (exponent, coefficient) pairs."""
    atom: int
    center: np.ndarray
    exps: np.ndarray
    coefs: np.ndarray      # premultiplied by primitive norms, renormalized


@dataclass
class BasisSet:
    shells: list

    @property
    def n_ao(self):
        return len(self.shells)


@dataclass
class IntegralSet:
    """AO-basis integrals (or MO-basis ones ingested from FCIDUMP, S = 1)."""
    n_ao: int
    s: np.ndarray
    hcore: np.ndarray
    eri: np.ndarray                 # chemists' (pq|rs)
    e_nuc: float
    origin: np.ndarray
    dipole: np.ndarray = None       # (3, n, n), <p|r_w - o_w|q>
    quadrupole: np.ndarray = None   # (6, n, n), xx xy xz yy yz zz


def parse_xyz(text):
    """Parse a single-frame XYZ string (coordinates in angstrom) to a Molecule."""
    frames = parse_xyz_frames(text)
    if len(frames) != 1:
        raise ParseError("expected a single XYZ frame, found %d" % len(frames))
    return frames[0]


def parse_xyz_frames(text):
    """Parse a (possibly multi-frame) XYZ string into a list of Molecules."""
    lines = text.splitlines()
    frames = []
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        try:
            natoms = int(lines[i].strip())
        except ValueError:
            raise ParseError("expected atom count on line %d" % (i + 1))
        if i + 1 + natoms >= len(lines) + 1 and natoms > 0:
            pass
        if i + 1 + natoms > len(lines):
            raise ParseError("truncated XYZ frame starting on line %d" % (i + 1))
        comment = lines[i + 1] if i + 1 < len(lines) else ""
        charge = 0
        m = re.search(r"charge=(-?\d+)", comment)
        if m:
            charge = int(m.group(1))
        atoms = []
        for k in range(natoms):
            parts = lines[i + 2 + k].split()
            if len(parts) != 4:
                raise ParseError("malformed atom line %d" % (i + 3 + k))
            sym = parts[0]
            if sym not in ELEMENTS:
                raise ParseError("unknown element '%s'" % sym)
            xyz = np.array([float(p) for p in parts[1:]]) * BOHR_PER_ANGSTROM
            atoms.append((ELEMENTS[sym], xyz))
        frames.append(Molecule(atoms, charge))
        i += 2 + natoms
    if not frames:
        raise ParseError("no XYZ frames found")
    return frames


def build_basis(mol, name):
    """Attach the named embedded basis (s shells only) to every atom."""
    if name.lower() != "sto-3g":
        raise ValueError("unsupported basis '%s'" % name)
    shells = []
    for ia, (z, pos) in enumerate(mol.atoms):
        if z not in STO3G:
            raise ValueError("unsupported element Z=%d for basis '%s'" % (z, name))
        exps, coefs = STO3G[z]
        exps = np.asarray(exps, dtype=float)
        coefs = np.asarray(coefs, dtype=float) * (2.0 * exps / np.pi) ** 0.75
        # renormalize the contraction so <phi|phi> = 1 exactly
        p = exps[:, None] + exps[None, :]
        s_self = (coefs[:, None] * coefs[None, :] * (np.pi / p) ** 1.5).sum()
        coefs = coefs / math.sqrt(s_self)
        shells.append(Shell(ia, pos.copy(), exps, coefs))
    return BasisSet(shells)


def boys0(x):
    """Boys function F0 with a series branch near x = 0."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-6
    safe = np.where(small, 1.0, x)
    val = 0.5 * np.sqrt(np.pi / safe) * erf(np.sqrt(safe))
    series = 1.0 - x / 3.0 + x * x / 10.0 - x ** 3 / 42.0
    return np.where(small, series, val)


def nuclear_repulsion(mol):
    e = 0.0
    for i, (zi, ri) in enumerate(mol.atoms):
        for j in range(i):
            zj, rj = mol.atoms[j]
            e += zi * zj / np.linalg.norm(ri - rj)
    return e


def nuclear_dipole(mol, origin):
    return sum(z * (pos - origin) for z, pos in mol.atoms)


def nuclear_quadrupole(mol, origin):
    """Second moment sum_A Z_A (R-o)_w (R-o)_x, packed xx xy xz yy yz zz."""
    q = np.zeros(6)
    for z, pos in mol.atoms:
        d = pos - origin
        q += z * np.array([d[0] * d[0], d[0] * d[1], d[0] * d[2],
                           d[1] * d[1], d[1] * d[2], d[2] * d[2]])
    return q


def compute_integrals(mol, basis, origin=None):
    """All AO integrals for s-type shells via Gaussian product closed forms.

    Multipole matrices are taken about `origin` (default: center of nuclear
    charge); the origin used is recorded on the returned IntegralSet.
    """
    if origin is None:
        origin = mol.nuclear_charge_center()
    origin = np.asarray(origin, dtype=float)
    n = basis.n_ao
    s = np.zeros((n, n))
    t = np.zeros((n, n))
    v = np.zeros((n, n))
    dip = np.zeros((3, n, n))
    quad = np.zeros((6, n, n))
    zs = mol.charges()
    rs = mol.positions()

    pair = {}
    for a in range(n):
        sa = basis.shells[a]
        for b in range(a + 1):
            sb = basis.shells[b]
            al = sa.exps[:, None]
            be = sb.exps[None, :]
            cc = sa.coefs[:, None] * sb.coefs[None, :]
            p = al + be
            ab2 = float(np.dot(sa.center - sb.center, sa.center - sb.center))
            k = np.exp(-al * be / p * ab2)
            sp = (np.pi / p) ** 1.5 * k
            # gaussian product centers, one per primitive pair
            pc = (al[..., None] * sa.center + be[..., None] * sb.center) / p[..., None]
            pair[a, b] = (p, cc, sp, pc)

            s[a, b] = (cc * sp).sum()
            mu = al * be / p
            t[a, b] = (cc * mu * (3.0 - 2.0 * mu * ab2) * sp).sum()
            va = 0.0
            for zc, rc in zip(zs, rs):
                pc2 = ((pc - rc) ** 2).sum(axis=-1)
                va -= zc * (cc * 2.0 * np.pi / p * k * boys0(p * pc2)).sum()
            v[a, b] = va
            po = pc - origin
            for w in range(3):
                dip[w, a, b] = (cc * sp * po[..., w]).sum()
            for idx, (w, x) in enumerate(((0, 0), (0, 1), (0, 2),
                                          (1, 1), (1, 2), (2, 2))):
                extra = (0.5 / p) if w == x else 0.0
                quad[idx, a, b] = (cc * sp * (po[..., w] * po[..., x] + extra)).sum()
            if a != b:
                s[b, a] = s[a, b]
                t[b, a] = t[a, b]
                v[b, a] = v[a, b]
                dip[:, b, a] = dip[:, a, b]
                quad[:, b, a] = quad[:, a, b]

    eri = np.zeros((n, n, n, n))
    for a in range(n):
        for b in range(a + 1):
            p1, c1, _, pc1 = pair[a, b]
            k1 = c1 * np.exp(-(basis.shells[a].exps[:, None] * basis.shells[b].exps[None, :]
                               / p1) * float(((basis.shells[a].center - basis.shells[b].center) ** 2).sum()))
            ab = a * (a + 1) // 2 + b
            for c in range(n):
                for d in range(c + 1):
                    cd = c * (c + 1) // 2 + d
                    if cd > ab:
                        continue
                    p2, c2, _, pc2 = pair[c, d]
                    k2 = c2 * np.exp(-(basis.shells[c].exps[:, None] * basis.shells[d].exps[None, :]
                                       / p2) * float(((basis.shells[c].center - basis.shells[d].center) ** 2).sum()))
                    pq2 = ((pc1[:, :, None, None, :] - pc2[None, None, :, :, :]) ** 2).sum(axis=-1)
                    psum = p1[:, :, None, None] + p2[None, None, :, :]
                    alpha = p1[:, :, None, None] * p2[None, None, :, :] / psum
                    pref = (2.0 * np.pi ** 2.5
                            / (p1[:, :, None, None] * p2[None, None, :, :] * np.sqrt(psum)))
                    val = (k1[:, :, None, None] * k2[None, None, :, :]
                           * pref * boys0(alpha * pq2)).sum()
                    for (i, j) in ((a, b), (b, a)):
                        for (k, l) in ((c, d), (d, c)):
                            eri[i, j, k, l] = val
                            eri[k, l, i, j] = val

    return IntegralSet(n_ao=n, s=s, hcore=t + v, eri=eri,
                       e_nuc=nuclear_repulsion(mol), origin=origin,
                       dipole=dip, quadrupole=quad)


def ingest_fcidump(text):
    """Read an FCIDUMP string; returns (IntegralSet in MO form, nelec, norb).

    The integrals come back in an orthonormal MO basis (S = identity) with
    the 8-fold permutational symmetry of the stored unique elements
    reconstructed.  Multipole matrices are not part of FCIDUMP and are left
    unset.
    """
    m = re.search(r"&FCI(.*?)(?:&END|/)", text, re.S | re.I)
    if m is None:
        # tolerate a bare one-line header with no namelist terminator
        m = re.search(r"&FCI([^\n]*)", text, re.I)
    if m is None:
        raise ParseError("missing &FCI header")
    header = m.group(1)
    fields = {}
    for key, val in re.findall(r"([A-Za-z0-9_]+)\s*=\s*([^=]*?)(?=[,\s]+[A-Za-z0-9_]+\s*=|\s*$)",
                               header):
        fields[key.upper()] = val.strip().rstrip(",")
    for req in ("NORB", "NELEC", "MS2"):
        if req not in fields:
            raise ParseError("FCIDUMP header missing %s" % req)
    norb = int(fields["NORB"])
    nelec = int(fields["NELEC"])
    ms2 = int(fields["MS2"].split(",")[0])
    if ms2 != 0:
        raise ParseError("only MS2=0 FCIDUMP files are supported (got %d)" % ms2)

    h = np.zeros((norb, norb))
    eri = np.zeros((norb, norb, norb, norb))
    e_core = 0.0
    body = text[m.end():]
    for line in body.splitlines():
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise ParseError("malformed integral record: %r" % line)
        val = float(parts[0])
        i, j, k, l = (int(p) for p in parts[1:])
        for idx in (i, j, k, l):
            if idx < 0 or idx > norb:
                raise ParseError("orbital index %d out of range (NORB=%d)" % (idx, norb))
        if i == j == k == l == 0:
            e_core = val
        elif k == 0 and l == 0:
            h[i - 1, j - 1] = val
            h[j - 1, i - 1] = val
        else:
            if 0 in (i, j, k, l):
                raise ParseError("mixed zero/nonzero indices in record: %r" % line)
            a, b, c, d = i - 1, j - 1, k - 1, l - 1
            for (p, q, r, s) in ((a, b, c, d), (b, a, c, d), (a, b, d, c), (b, a, d, c),
                                 (c, d, a, b), (d, c, a, b), (c, d, b, a), (d, c, b, a)):
                eri[p, q, r, s] = val

    ints = IntegralSet(n_ao=norb, s=np.eye(norb), hcore=h, eri=eri,
                       e_nuc=e_core, origin=np.zeros(3))
    return ints, nelec, norb
