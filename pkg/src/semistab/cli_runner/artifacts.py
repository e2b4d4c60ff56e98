"""Sweep CSV, JSON report (schema v1) and binary checkpoints."""
import json
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from ..errors import StateError
from ..higgs_bundle import HermitianState, HiggsBundleData
from ..torus_geometry import ConformalMetric, make_grid

CSV_COLUMNS = ("eps", "m", "eps_m", "max_phi", "l2_s", "l2_Dpp_u", "det_f_err", "lemma22_ok")
SCHEMA_VERSION = "v1"
MAGIC = b"SEMISTAB"
CKPT_VERSION = 1


@dataclass
class RunArtifacts:
    csv_path: Path
    report_path: Path
    checkpoint_dir: Path
    log_path: Path
    config_hash: str
    verdict: str = ""


def _fmt(x) -> str:
    if x is None:
        return "nan"
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    return "%.17g" % float(x)


def sweep_csv_text(rows, config_hash: str) -> str:
    """Comma-separated, one row per eps; failed rows carry nan values."""
    lines = [f"# config_hash={config_hash}", ",".join(CSV_COLUMNS)]
    for r in rows:
        lines.append(",".join(_fmt(getattr(r, c)) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def write_sweep_csv(path, rows, config_hash: str) -> Path:
    path = Path(path)
    path.write_bytes(sweep_csv_text(rows, config_hash).encode())
    return path


def read_sweep_csv(path) -> dict:
    text = Path(path).read_text().splitlines()
    meta = text[0][2:].split("=", 1)
    header = text[1].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in text[2:]]).reshape(-1, len(header))
    return {"config_hash": meta[1], "columns": header, "data": data}


# JSON -------------------------------------------------------------------------------

def load_schema() -> dict:
    return json.loads(resources.files("semistab.cli_runner").joinpath(
        "report_schema_v1.json").read_text())


def _clean(obj):
    """Make numpy scalars and arrays JSON friendly; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else None
    return obj


def validate_report(report: dict) -> None:
    jsonschema.validate(report, load_schema())


def write_report(path, report: dict) -> Path:
    report = _clean(report)
    validate_report(report)
    path = Path(path)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return path


def read_report(path) -> dict:
    report = json.loads(Path(path).read_text())
    validate_report(report)
    return report


# Checkpoints ----------------------------------------------------------------------------
#
# Layout, all little endian:
#   magic "SEMISTAB", u32 version, u32 N, f64 Re tau, f64 Im tau, u32 rank,
#   u32 len(flux), i64 flux[...], then complex fields as (re, im) f64 pairs in
#   row-major site-major order: links (2,N,N,r,r), a (N,N,r,r), phi (N,N,r,r),
#   s (N,N,r,r). Trailing blocks: u32 len(block_sizes), i64 block_sizes[...],
#   f64 conformal (N,N), f64 weight (N,N), f64 eps.

def write_checkpoint(path, bundle: HiggsBundleData, metric: ConformalMetric,
                     state: HermitianState, eps: float) -> Path:
    g = bundle.grid
    r = bundle.rank
    parts = [MAGIC, struct.pack("<IIddII", CKPT_VERSION, g.N, g.tau.real, g.tau.imag, r,
                                len(bundle.flux)),
             struct.pack(f"<{len(bundle.flux)}q", *bundle.flux)]
    for arr in (bundle.links, bundle.a_field, bundle.phi_field, state.s_field):
        parts.append(np.ascontiguousarray(arr, dtype="<c16").tobytes())
    parts.append(struct.pack(f"<I{len(bundle.block_sizes)}q", len(bundle.block_sizes),
                             *bundle.block_sizes))
    parts.append(np.ascontiguousarray(bundle.conformal, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(metric.weight, dtype="<f8").tobytes())
    parts.append(struct.pack("<d", eps))
    path = Path(path)
    path.write_bytes(b"".join(parts))
    return path


def read_checkpoint(path):
    """Returns (bundle, metric, state, eps)."""
    buf = Path(path).read_bytes()
    if buf[:len(MAGIC)] != MAGIC:
        raise StateError("not a checkpoint file (bad magic)")
    off = len(MAGIC)
    version, N, tre, tim, r, nf = struct.unpack_from("<IIddII", buf, off)
    if version != CKPT_VERSION:
        raise StateError(f"unsupported checkpoint version {version}")
    off += struct.calcsize("<IIddII")
    flux = struct.unpack_from(f"<{nf}q", buf, off)
    off += 8 * nf

    def take(shape, dtype):
        nonlocal off
        n = int(np.prod(shape)) * np.dtype(dtype).itemsize
        out = np.frombuffer(buf, dtype=dtype, count=int(np.prod(shape)), offset=off).reshape(shape)
        off += n
        return out.astype(dtype[1:] if dtype.startswith("<") else dtype).copy()

    links = take((2, N, N, r, r), "<c16")
    a = take((N, N, r, r), "<c16")
    phi = take((N, N, r, r), "<c16")
    s = take((N, N, r, r), "<c16")
    (nb,) = struct.unpack_from("<I", buf, off)
    off += 4
    blocks = struct.unpack_from(f"<{nb}q", buf, off)
    off += 8 * nb
    conformal = take((N, N), "<f8")
    weight = take((N, N), "<f8")
    (eps,) = struct.unpack_from("<d", buf, off)
    off += 8
    if off != len(buf):
        raise StateError("trailing bytes in checkpoint")
    grid, metric = make_grid(N, complex(tre, tim), weight)
    bundle = HiggsBundleData(grid, r, tuple(int(f) for f in flux), tuple(int(b) for b in blocks),
                             links, a, phi, conformal)
    return bundle, metric, HermitianState(s), eps
