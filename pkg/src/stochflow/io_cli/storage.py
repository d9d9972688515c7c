"""Self-identifying binary containers for trajectories, ensembles, and bases.

Layout (all integers little-endian):

    magic     8 bytes   b"SGNSBIN\\x00"
    version   u32       format version (currently 1)
    kind      16 bytes  ascii, zero padded ("trajectory", "basis", ...)
    hash      64 bytes  ascii hex sha256 of the producing config
    n_meta    u32       scalar metadata: per item u16 name length, name utf8,
                        f64 value
    n_text    u32       text metadata: per item u16+name, u16+utf8 value
    n_arrays  u32       per array: u16+name, u8 dtype (0 = <f8, 1 = <i8),
                        u8 ndim, ndim x u64 shape, raw data

Arrays are written C-order, so time series are time-major as integrated.
Loading validates structure strictly: wrong magic, unknown version, config
hash mismatch, and truncation are separate error types so callers can tell
an incompatible file from a corrupt one.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..basis import BasisSpec, ConvectionTensor
from ..sde import Trajectory

MAGIC = b"SGNSBIN\x00"
VERSION = 1

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_DTYPE_CODES = {np.dtype("<f8"): 0, np.dtype("<i8"): 1}


class StorageError(IOError):
    """Base class for container format errors."""


class MagicError(StorageError):
    pass


class VersionError(StorageError):
    def __init__(self, found: int, expected: int):
        self.found, self.expected = found, expected
        super().__init__(f"container version {found}, this build reads version {expected}")


class HashMismatchError(StorageError):
    def __init__(self, found: str, expected: str):
        self.found, self.expected = found, expected
        super().__init__(
            f"config hash mismatch: file carries {found}, caller expects {expected}"
        )


class TruncatedFileError(StorageError):
    pass


def save_container(
    path,
    kind: str,
    config_hash: str,
    meta: dict[str, float] | None = None,
    text: dict[str, str] | None = None,
    arrays: dict[str, np.ndarray] | None = None,
):
    meta = meta or {}
    text = text or {}
    arrays = arrays or {}
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    buf += kind.encode().ljust(16, b"\x00")[:16]
    if len(config_hash) != 64:
        raise StorageError(f"config hash must be 64 hex chars, got {len(config_hash)}")
    buf += config_hash.encode()
    buf += struct.pack("<I", len(meta))
    for name, value in meta.items():
        enc = name.encode()
        buf += struct.pack("<H", len(enc)) + enc + struct.pack("<d", float(value))
    buf += struct.pack("<I", len(text))
    for name, value in text.items():
        enc, venc = name.encode(), value.encode()
        buf += struct.pack("<H", len(enc)) + enc
        buf += struct.pack("<H", len(venc)) + venc
    buf += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8", copy=False)
        elif arr.dtype.kind in "iub":
            arr = arr.astype("<i8")
        else:
            raise StorageError(f"array {name!r} has unsupported dtype {arr.dtype}")
        enc = name.encode()
        buf += struct.pack("<H", len(enc)) + enc
        buf += struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim)
        buf += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        buf += arr.tobytes()
    Path(path).write_bytes(bytes(buf))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"file ends at byte {len(self.data)}, needed {self.pos + n}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_container(path, expect_kind: str | None = None, expect_hash: str | None = None) -> dict:
    raw = Path(path).read_bytes()
    r = _Reader(raw)
    if r.take(len(MAGIC)) != MAGIC:
        raise MagicError(f"{path} is not a stochflow container")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionError(version, VERSION)
    kind = r.take(16).rstrip(b"\x00").decode()
    if expect_kind is not None and kind != expect_kind:
        raise StorageError(f"container holds {kind!r}, expected {expect_kind!r}")
    config_hash = r.take(64).decode()
    if expect_hash is not None and config_hash != expect_hash:
        raise HashMismatchError(config_hash, expect_hash)
    meta, text, arrays = {}, {}, {}
    (n_meta,) = r.unpack("<I")
    for _ in range(n_meta):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode()
        (meta[name],) = r.unpack("<d")
    (n_text,) = r.unpack("<I")
    for _ in range(n_text):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode()
        (vn,) = r.unpack("<H")
        text[name] = r.take(vn).decode()
    (n_arrays,) = r.unpack("<I")
    for _ in range(n_arrays):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode()
        code, ndim = r.unpack("<BB")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        dtype = _DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = r.take(count * dtype.itemsize)
        arrays[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    if r.pos != len(raw):
        raise StorageError(f"{len(raw) - r.pos} trailing bytes after container payload")
    return {"kind": kind, "config_hash": config_hash, "meta": meta,
            "text": text, "arrays": arrays}


# -- trajectories -------------------------------------------------------------


def save_trajectory(path, traj: Trajectory, config_hash: str, sidecar: bool = True):
    """Binary container plus an NDJSON sidecar of per-time summaries."""
    save_container(
        path,
        kind="trajectory",
        config_hash=config_hash,
        meta={
            "dt": traj.dt,
            "store_every": traj.store_every,
            "seed": traj.seed,
            "nu": traj.nu,
            "blowup_time": -1.0 if traj.blowup_time is None else traj.blowup_time,
        },
        text={"scheme": traj.scheme},
        arrays={
            "times": traj.times,
            "states": traj.states,
            "energy": traj.energy,
            "grad_energy": traj.grad_energy,
            "stoch_int": traj.stoch_int,
            "grad_int": traj.grad_int,
            "increments": traj.increments,
        },
    )
    if sidecar:
        lines = [
            json.dumps({"t": float(t), "energy": float(e), "grad_energy": float(g)})
            for t, e, g in zip(traj.times, traj.energy, traj.grad_energy)
        ]
        Path(str(path) + ".ndjson").write_text("\n".join(lines) + "\n")


def load_trajectory(path, expect_hash: str | None = None) -> tuple[Trajectory, str]:
    box = load_container(path, expect_kind="trajectory", expect_hash=expect_hash)
    meta, arrays = box["meta"], box["arrays"]
    blow = meta["blowup_time"]
    traj = Trajectory(
        times=arrays["times"],
        states=arrays["states"],
        energy=arrays["energy"],
        grad_energy=arrays["grad_energy"],
        stoch_int=arrays["stoch_int"],
        grad_int=arrays["grad_int"],
        increments=arrays["increments"],
        seed=int(meta["seed"]),
        dt=meta["dt"],
        store_every=int(meta["store_every"]),
        scheme=box["text"]["scheme"],
        nu=meta["nu"],
        blowup_time=None if blow < 0 else blow,
    )
    return traj, box["config_hash"]


# -- basis + tensors memoization ----------------------------------------------


def save_structure(path, basis: BasisSpec, conv: ConvectionTensor, config_hash: str = "0" * 64):
    save_container(
        path,
        kind="basis",
        config_hash=config_hash,
        meta={
            "dim": basis.dim,
            "cutoff": basis.cutoff,
            "n_modes": basis.n_modes,
            "ordering_version": basis.ordering_version,
        },
        arrays={
            "wavevectors": basis.wavevectors,
            "pol_int": basis.pol_int,
            "mode_wave": basis.mode_wave,
            "mode_pol": basis.mode_pol,
            "mode_phase": basis.mode_phase,
            "conv_i": conv.i_idx,
            "conv_k": conv.k_idx,
            "conv_j": conv.j_idx,
            "conv_values": conv.values,
        },
    )


def load_structure(path) -> tuple[BasisSpec, ConvectionTensor]:
    from scipy import sparse

    box = load_container(path, expect_kind="basis")
    meta, arr = box["meta"], box["arrays"]
    basis = BasisSpec(
        dim=int(meta["dim"]),
        cutoff=int(meta["cutoff"]),
        wavevectors=arr["wavevectors"],
        pol_int=arr["pol_int"],
        mode_wave=arr["mode_wave"],
        mode_pol=arr["mode_pol"],
        mode_phase=arr["mode_phase"],
        ordering_version=int(meta["ordering_version"]),
    )
    values = arr["conv_values"]
    scatter = sparse.csr_matrix(
        (values, (arr["conv_j"], np.arange(values.size))),
        shape=(basis.n_modes, values.size),
    )
    conv = ConvectionTensor(
        n_modes=basis.n_modes,
        i_idx=arr["conv_i"],
        k_idx=arr["conv_k"],
        j_idx=arr["conv_j"],
        values=values,
        _scatter=scatter,
    )
    return basis, conv


# -- ensembles -----------------------------------------------------------------


def save_ensemble(path_prefix, ens, config_hash: str):
    """Summary container, probe container, and an NDJSON manifest."""
    prefix = Path(path_prefix)
    summary = prefix.with_suffix(".summary.bin")
    probes = prefix.with_suffix(".probes.bin")
    manifest = prefix.with_suffix(".manifest.ndjson")
    save_container(
        summary,
        kind="ensemble-summary",
        config_hash=config_hash,
        meta={
            "dt": ens.dt,
            "n_steps": ens.n_steps,
            "store_every": ens.store_every,
            "base_seed": ens.base_seed,
            "members": ens.n_members,
            "nu": ens.system.nu,
        },
        text={"scheme": ens.scheme},
        arrays={
            "times": ens.times,
            "energy": ens.energy,
            "grad_energy": ens.grad_energy,
            "stoch_int": ens.stoch_int,
            "grad_int": ens.grad_int,
            "sup_energy": ens.sup_energy,
            "final_states": ens.final_states,
            "blowup_step": ens.blowup_step,
            "seeds": ens.seeds.astype(np.int64),
            "initial_states": ens.initial_states,
        },
    )
    save_container(
        probes,
        kind="ensemble-probes",
        config_hash=config_hash,
        arrays={"probe_times": ens.probe_times, "probe_states": ens.probe_states},
    )
    records = [json.dumps({
        "config_hash": config_hash,
        "members": ens.n_members,
        "base_seed": ens.base_seed,
        "summary": summary.name,
        "probes": probes.name,
    })]
    records += [
        json.dumps({"member": m, "seed": int(ens.seeds[m])})
        for m in range(ens.n_members)
    ]
    manifest.write_text("\n".join(records) + "\n")
    return {"summary": summary, "probes": probes, "manifest": manifest}
