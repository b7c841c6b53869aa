"""Dataset generation and the versioned binary container.

One self-describing container format holds everything the package persists:
magic "CCRS", a format version, little-endian float64 tensors with explicit
shape headers, and length-prefixed UTF-8 key/value metadata.  Loading
verifies magic, version, and record invariants before anything is used.
"""

import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContainerError

MAGIC = b"CCRS"
VERSION = 1

_KIND_TENSOR = 0
_KIND_TEXT = 1
_KIND_FLOAT = 2
_KIND_INT = 3


def save_payload(path, payload):
    """Write a flat {key: tensor|str|float|int} mapping to a container file."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(payload)))
        for key in sorted(payload):
            val = payload[key]
            kb = key.encode("utf-8")
            fh.write(struct.pack("<I", len(kb)))
            fh.write(kb)
            if isinstance(val, np.ndarray):
                arr = np.ascontiguousarray(val, dtype="<f8")
                fh.write(struct.pack("<B", _KIND_TENSOR))
                fh.write(struct.pack("<B", arr.ndim))
                for dim in arr.shape:
                    fh.write(struct.pack("<q", dim))
                fh.write(arr.tobytes())
            elif isinstance(val, str):
                vb = val.encode("utf-8")
                fh.write(struct.pack("<B", _KIND_TEXT))
                fh.write(struct.pack("<q", len(vb)))
                fh.write(vb)
            elif isinstance(val, bool):
                fh.write(struct.pack("<B", _KIND_INT))
                fh.write(struct.pack("<q", int(val)))
            elif isinstance(val, (int, np.integer)):
                fh.write(struct.pack("<B", _KIND_INT))
                fh.write(struct.pack("<q", int(val)))
            elif isinstance(val, (float, np.floating)):
                fh.write(struct.pack("<B", _KIND_FLOAT))
                fh.write(struct.pack("<d", float(val)))
            else:
                raise TypeError("unsupported payload type for key %r: %s"
                                % (key, type(val)))


def load_payload(path):
    """Read a container file back into a {key: value} mapping."""
    with open(path, "rb") as fh:
        data = fh.read()
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ContainerError("truncated container (corrupt file)")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise ContainerError("bad magic; not a CCRS container")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise ContainerError("container version %d unsupported (expected %d)"
                             % (version, VERSION))
    (count,) = struct.unpack("<I", take(4))
    payload = {}
    for _ in range(count):
        (klen,) = struct.unpack("<I", take(4))
        key = bytes(take(klen)).decode("utf-8")
        (kind,) = struct.unpack("<B", take(1))
        if kind == _KIND_TENSOR:
            (ndim,) = struct.unpack("<B", take(1))
            shape = tuple(struct.unpack("<q", take(8))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).copy()
            payload[key] = arr
        elif kind == _KIND_TEXT:
            (length,) = struct.unpack("<q", take(8))
            payload[key] = bytes(take(length)).decode("utf-8")
        elif kind == _KIND_FLOAT:
            payload[key] = struct.unpack("<d", take(8))[0]
        elif kind == _KIND_INT:
            payload[key] = struct.unpack("<q", take(8))[0]
        else:
            raise ContainerError("unknown payload kind %d" % kind)
    if pos != len(data):
        raise ContainerError("trailing bytes after container payload")
    return payload


@dataclass
class DatasetRecord:
    """One labeled molecule: geometry, gauge, and amplitude labels in both gauges."""
    molecule_id: str
    charges: np.ndarray = None
    positions: np.ndarray = None
    molecule_charge: int = 0
    e_hf: float = 0.0
    eps: np.ndarray = None
    u_occ: np.ndarray = None
    u_virt: np.ndarray = None
    centroids_occ: np.ndarray = None
    centroids_virt: np.ndarray = None
    spreads_occ: np.ndarray = None
    spreads_virt: np.ndarray = None
    canonical: dict = None         # t1, t2, l1, l2
    localized: dict = None
    t2_mp2: np.ndarray = None      # canonical-gauge MP2 baseline
    w_oovv: np.ndarray = None      # canonical <ij||ab> (e_corr reproduction)
    e_corr: float = 0.0
    failed: bool = False
    fail_reason: str = ""
    provenance: dict = field(default_factory=dict)


def generate_dataset(geometries, basis_name="sto-3g", tol=1e-10, max_iter=200,
                     gauge_opts=None):
    """Run the full HF -> localize -> MP2 -> CCSD -> Lambda pipeline per geometry.

    Failures are recorded on the affected record instead of raised; record
    order follows the input order.
    """
    from .ccsd import mp2_amplitudes
    from .gauge import transform_amplitudes
    from .pipeline import build_system, run_response_state

    if not geometries:
        raise ValueError("empty geometry list")
    records = []
    for k, mol in enumerate(geometries):
        rec = DatasetRecord(molecule_id="mol%03d" % k)
        try:
            rec.charges = mol.charges()
            rec.positions = mol.positions()
            rec.molecule_charge = mol.charge
            system = build_system(mol, basis_name)
            cc, gauge, loc = run_response_state(system, tol=tol, max_iter=max_iter,
                                                gauge_opts=gauge_opts)
            o, v = system.so.o, system.so.v
            t2_mp2, _ = mp2_amplitudes(system.so)
            rec.e_hf = system.scf.e_hf
            rec.eps = system.scf.eps
            rec.u_occ = gauge.u_occ
            rec.u_virt = gauge.u_virt
            rec.centroids_occ = gauge.centroids_occ
            rec.centroids_virt = gauge.centroids_virt
            rec.spreads_occ = gauge.spreads_occ
            rec.spreads_virt = gauge.spreads_virt
            rec.canonical = {n: getattr(cc.amps, n) for n in ("t1", "t2", "l1", "l2")}
            rec.localized = {n: getattr(loc, n) for n in ("t1", "t2", "l1", "l2")}
            rec.t2_mp2 = t2_mp2
            rec.w_oovv = system.so.w[o, o, v, v]
            rec.e_corr = cc.e_corr
            rec.provenance = {"tol": tol, "basis": basis_name,
                              "version": "ccrs-0.1.0",
                              "timestamp": time.time()}
        except Exception as exc:  # noqa: BLE001 - recorded per record
            rec.failed = True
            rec.fail_reason = "%s: %s" % (type(exc).__name__, exc)
        records.append(rec)
    return records


def _record_payload(rec, prefix):
    out = {prefix + "molecule_id": rec.molecule_id,
           prefix + "failed": int(rec.failed),
           prefix + "fail_reason": rec.fail_reason}
    if rec.failed:
        return out
    out[prefix + "charges"] = rec.charges
    out[prefix + "positions"] = rec.positions
    out[prefix + "molecule_charge"] = rec.molecule_charge
    out[prefix + "e_hf"] = rec.e_hf
    out[prefix + "eps"] = rec.eps
    out[prefix + "u_occ"] = rec.u_occ
    out[prefix + "u_virt"] = rec.u_virt
    out[prefix + "centroids_occ"] = rec.centroids_occ
    out[prefix + "centroids_virt"] = rec.centroids_virt
    out[prefix + "spreads_occ"] = rec.spreads_occ
    out[prefix + "spreads_virt"] = rec.spreads_virt
    for gauge_name, amps in (("canonical", rec.canonical), ("localized", rec.localized)):
        for name, arr in amps.items():
            out["%s%s_%s" % (prefix, gauge_name, name)] = arr
    out[prefix + "t2_mp2"] = rec.t2_mp2
    out[prefix + "w_oovv"] = rec.w_oovv
    out[prefix + "e_corr"] = rec.e_corr
    for key, val in rec.provenance.items():
        out["%sprov_%s" % (prefix, key)] = val
    return out


def save_records(path, records):
    payload = {"kind": "dataset", "n_records": len(records)}
    for k, rec in enumerate(records):
        payload.update(_record_payload(rec, "rec%04d/" % k))
    save_payload(path, payload)


def load_records(path, validate=True):
    payload = load_payload(path)
    if payload.get("kind") != "dataset":
        raise ContainerError("container does not hold a dataset")
    records = []
    for k in range(payload["n_records"]):
        prefix = "rec%04d/" % k
        rec = DatasetRecord(molecule_id=payload[prefix + "molecule_id"])
        rec.failed = bool(payload[prefix + "failed"])
        rec.fail_reason = payload[prefix + "fail_reason"]
        if not rec.failed:
            rec.charges = payload[prefix + "charges"]
            rec.positions = payload[prefix + "positions"]
            rec.molecule_charge = int(payload[prefix + "molecule_charge"])
            rec.e_hf = payload[prefix + "e_hf"]
            rec.eps = payload[prefix + "eps"]
            rec.u_occ = payload[prefix + "u_occ"]
            rec.u_virt = payload[prefix + "u_virt"]
            rec.centroids_occ = payload[prefix + "centroids_occ"]
            rec.centroids_virt = payload[prefix + "centroids_virt"]
            rec.spreads_occ = payload[prefix + "spreads_occ"]
            rec.spreads_virt = payload[prefix + "spreads_virt"]
            rec.canonical = {n: payload["%scanonical_%s" % (prefix, n)]
                             for n in ("t1", "t2", "l1", "l2")}
            rec.localized = {n: payload["%slocalized_%s" % (prefix, n)]
                             for n in ("t1", "t2", "l1", "l2")}
            rec.t2_mp2 = payload[prefix + "t2_mp2"]
            rec.w_oovv = payload[prefix + "w_oovv"]
            rec.e_corr = payload[prefix + "e_corr"]
            rec.provenance = {key[len(prefix) + 5:]: val
                              for key, val in payload.items()
                              if key.startswith(prefix + "prov_")}
            if validate:
                _validate_record(rec)
        records.append(rec)
    return records


def _validate_record(rec):
    """Re-check stored invariants: gauge round trip and e_corr reproduction."""
    from .gauge import AmplitudeSet, GaugeSpec, transform_amplitudes

    for gauge_name in ("canonical", "localized"):
        for name, arr in getattr(rec, gauge_name).items():
            if not np.all(np.isfinite(arr)):
                raise ContainerError("non-finite %s amplitudes in %s"
                                     % (gauge_name, rec.molecule_id))
    amps = AmplitudeSet(gauge="canonical", **rec.canonical)
    gauge = GaugeSpec(u_occ=rec.u_occ, u_virt=rec.u_virt)
    loc = transform_amplitudes(amps, gauge, "to_localized")
    for name in ("t1", "t2", "l1", "l2"):
        dev = np.abs(getattr(loc, name) - rec.localized[name]).max(initial=0.0)
        if dev > 1e-12:
            raise ContainerError("stored localized %s deviates from the "
                                 "transformed canonical labels by %.2e" % (name, dev))
    e = (0.25 * np.einsum("ijab,ijab->", rec.w_oovv, rec.canonical["t2"])
         + 0.5 * np.einsum("ijab,ia,jb->", rec.w_oovv, rec.canonical["t1"],
                           rec.canonical["t1"]))
    if abs(e - rec.e_corr) > 1e-10:
        raise ContainerError("stored e_corr does not reproduce from T (%.2e off)"
                             % abs(e - rec.e_corr))


def save_model(path, model):
    from .surrogate import HEADS

    payload = {"kind": "model", "mode": model.mode, "seed": model.seed,
               "epochs_trained": model.epochs_trained,
               "loss_trace": np.asarray(model.loss_trace, dtype=float),
               "cfg/r_cut": model.config.r_cut,
               "cfg/radial_bins": model.config.radial_bins,
               "cfg/hidden": model.config.hidden}
    for stat in ("even_mean_pair", "even_scale_pair", "even_mean_quad",
                 "even_scale_quad", "signed_scale_pair", "signed_scale_quad"):
        val = getattr(model.config, stat)
        if val is not None:
            payload["cfg/" + stat] = val
    for name in HEADS:
        for key, arr in model.heads[name].items():
            payload["head/%s/%s" % (name, key)] = arr
    save_payload(path, payload)


def load_model(path):
    from .surrogate import HEADS, FeatureConfig, SurrogateModel

    payload = load_payload(path)
    if payload.get("kind") != "model":
        raise ContainerError("container does not hold a model")
    cfg = FeatureConfig(r_cut=payload["cfg/r_cut"],
                        radial_bins=int(payload["cfg/radial_bins"]),
                        hidden=int(payload["cfg/hidden"]))
    for stat in ("even_mean_pair", "even_scale_pair", "even_mean_quad",
                 "even_scale_quad", "signed_scale_pair", "signed_scale_quad"):
        if "cfg/" + stat in payload:
            setattr(cfg, stat, payload["cfg/" + stat])
    heads = {}
    for name in HEADS:
        heads[name] = {key: payload["head/%s/%s" % (name, key)]
                       for key in ("w_e", "w_s", "b", "w_out")}
    return SurrogateModel(heads=heads, mode=payload["mode"],
                          config=cfg, seed=int(payload["seed"]),
                          epochs_trained=int(payload["epochs_trained"]),
                          loss_trace=list(payload["loss_trace"]))


def examples_from_records(records, cfg, basis_name="sto-3g"):
    """Rebuild feature/label training examples from stored dataset records.

    Features are regenerated from the stored geometry through the same
    pipeline; the stored gauge is cross-checked against the rebuilt one so
    predictions and labels always share a gauge.
    """
    from .chem import Molecule
    from .gauge import AmplitudeSet, make_gauge
    from .pipeline import build_system
    from .surrogate import TrainingExample, build_features

    examples = []
    for rec in records:
        if rec.failed:
            continue
        mol = Molecule([(int(z), pos) for z, pos in
                        zip(rec.charges, rec.positions)], rec.molecule_charge)
        system = build_system(mol, basis_name)
        gauge = make_gauge(system.scf, system.ints)
        if (np.abs(gauge.u_occ - rec.u_occ).max() > 1e-8
                or np.abs(gauge.u_virt - rec.u_virt).max() > 1e-8):
            raise ValueError("gauge mismatch between stored record %s and the "
                             "rebuilt pipeline" % rec.molecule_id)
        pair, quad = build_features(system.scf, gauge, system.ints, cfg)
        ref = AmplitudeSet(gauge="localized", basis_id=rec.molecule_id,
                           **rec.localized)
        examples.append(TrainingExample(pair=pair, quad=quad, ref=ref,
                                        molecule_id=rec.molecule_id))
    return examples
