"""Binary tensor files and persistence of fitted artifacts.

Tensor file layout (magic ``TBT1``): a version byte, the tensor order as
one unsigned byte, the extents as unsigned 64-bit little-endian integers,
then the payload as IEEE-754 doubles, little-endian, flattened first index
fastest.  Round trips are bitwise lossless (NaN payloads included); loading
for computation validates finiteness separately.

Chain traces (magic ``TBTR``) and point fits (magic ``TBTM``) store a JSON
index header followed by concatenated tensor records.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .exceptions import ConfigError, ShapeError
from .fastfit import MapFit
from .model import ChainTrace, ModelShape, ParamState

_TENSOR_MAGIC = b"TBT1"
_TRACE_MAGIC = b"TBTR"
_FIT_MAGIC = b"TBTM"
_VERSION = 1


def tensor_to_bytes(t: np.ndarray) -> bytes:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim > 255:
        raise ShapeError("tensor order exceeds the format limit of 255")
    header = _TENSOR_MAGIC + struct.pack("<BB", _VERSION, t.ndim)
    header += struct.pack(f"<{t.ndim}Q", *t.shape)
    payload = t.reshape(-1, order="F")
    return header + payload.astype("<f8").tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple:
    """Decode one tensor record; returns ``(array, next_offset)``."""
    if buf[offset : offset + 4] != _TENSOR_MAGIC:
        raise ConfigError("not a tensor record (bad magic)")
    version, order = struct.unpack_from("<BB", buf, offset + 4)
    if version != _VERSION:
        raise ConfigError(f"unsupported tensor format version {version}")
    dims = struct.unpack_from(f"<{order}Q", buf, offset + 6)
    start = offset + 6 + 8 * order
    count = int(np.prod(dims, dtype=np.int64)) if order else 1
    stop = start + 8 * count
    if stop > len(buf):
        raise ConfigError("truncated tensor record")
    flat = np.frombuffer(buf[start:stop], dtype="<f8").astype(np.float64)
    return flat.reshape(dims, order="F"), stop


def write_tensor(path, t: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(t))


def read_tensor(path, validate_finite: bool = False) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    t, stop = tensor_from_bytes(buf)
    if stop != len(buf):
        raise ConfigError(f"{path}: trailing bytes after tensor record")
    if validate_finite and not np.isfinite(t).all():
        raise ConfigError(f"{path}: tensor contains non-finite values")
    return t


def write_csv_matrix(path, m: np.ndarray) -> None:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError("CSV format only supports order-2 tensors")
    np.savetxt(path, m, delimiter=",", fmt="%.17g")


def read_csv_matrix(path, validate_finite: bool = False) -> np.ndarray:
    m = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if validate_finite and not np.isfinite(m).all():
        raise ConfigError(f"{path}: matrix contains non-finite values")
    return m


# ---------------------------------------------------------------------------
# trace / fit persistence


def _with_header(magic: bytes, header: dict, records: list) -> bytes:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    out = magic + struct.pack("<BI", _VERSION, len(head)) + head
    return out + b"".join(records)


def _read_header(buf: bytes, magic: bytes) -> tuple:
    if buf[:4] != magic:
        raise ConfigError(f"bad magic for {magic.decode()} file")
    version, length = struct.unpack_from("<BI", buf, 4)
    if version != _VERSION:
        raise ConfigError(f"unsupported file version {version}")
    start = 9
    header = json.loads(buf[start : start + length].decode("utf-8"))
    return header, start + length


def save_trace(path, trace: ChainTrace) -> None:
    """Persist theta, sigma^2, and the assembled coefficient per stored draw."""
    b_stack = trace.coefficient_draws()
    header = {
        "n_samples": trace.shape.n_samples,
        "p_dims": list(trace.shape.p_dims),
        "q_dims": list(trace.shape.q_dims),
        "iterations": trace.iterations.tolist(),
        "thetas": trace.thetas.tolist(),
        "sigma2s": trace.sigma2s.tolist(),
        "burn_in": int(trace.burn_in),
        "seed": trace.seed,
        "accept_rate": None
        if np.isnan(trace.accept_rate)
        else float(trace.accept_rate),
        "n_records": int(b_stack.shape[0]),
        "theta_path": None
        if trace.theta_path is None
        else trace.theta_path.tolist(),
    }
    records = [tensor_to_bytes(b_stack[i]) for i in range(b_stack.shape[0])]
    with open(path, "wb") as fh:
        fh.write(_with_header(_TRACE_MAGIC, header, records))


def load_trace(path) -> ChainTrace:
    with open(path, "rb") as fh:
        buf = fh.read()
    header, offset = _read_header(buf, _TRACE_MAGIC)
    shape = ModelShape(header["n_samples"], header["p_dims"], header["q_dims"])
    n = header["n_records"]
    draws = []
    for _ in range(n):
        t, offset = tensor_from_bytes(buf, offset)
        draws.append(t)
    if offset != len(buf):
        raise ConfigError(f"{path}: trailing bytes after trace records")
    b_stack = (
        np.stack(draws)
        if draws
        else np.zeros((0, *shape.p_dims, *shape.q_dims))
    )
    accept = header.get("accept_rate")
    return ChainTrace(
        shape=shape,
        iterations=np.asarray(header["iterations"], dtype=np.int64),
        thetas=np.asarray(header["thetas"], dtype=np.int64).reshape(n, -1),
        sigma2s=np.asarray(header["sigma2s"], dtype=np.float64),
        b_draws=b_stack,
        burn_in=header["burn_in"],
        seed=header["seed"],
        accept_rate=float("nan") if accept is None else float(accept),
        theta_path=None
        if header.get("theta_path") is None
        else np.asarray(header["theta_path"], dtype=np.int64),
    )


def save_map_fit(path, fit: MapFit) -> None:
    """Persist the point fit: dimension, scores, sigma^2, and coefficient."""
    from .model import assemble_coefficient

    header = {
        "theta": list(fit.state.theta),
        "bic": float(fit.bic),
        "loglik": float(fit.loglik),
        "sigma2": float(fit.state.sigma2),
        "theta_path": [list(t) for t in fit.theta_path],
        "bic_path": [float(v) for v in fit.bic_path],
    }
    record = tensor_to_bytes(assemble_coefficient(fit.state))
    with open(path, "wb") as fh:
        fh.write(_with_header(_FIT_MAGIC, header, [record]))


def load_map_fit(path) -> dict:
    """Load a point fit as a dict with keys theta, bic, loglik, sigma2, b."""
    with open(path, "rb") as fh:
        buf = fh.read()
    header, offset = _read_header(buf, _FIT_MAGIC)
    b, offset = tensor_from_bytes(buf, offset)
    if offset != len(buf):
        raise ConfigError(f"{path}: trailing bytes after fit record")
    return {
        "theta": tuple(header["theta"]),
        "bic": header["bic"],
        "loglik": header["loglik"],
        "sigma2": header["sigma2"],
        "theta_path": [tuple(t) for t in header["theta_path"]],
        "bic_path": header["bic_path"],
        "b": b,
    }


def sniff_artifact(path) -> str:
    """Identify a persisted artifact: ``trace``, ``fit``, or ``tensor``."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == _TRACE_MAGIC:
        return "trace"
    if magic == _FIT_MAGIC:
        return "fit"
    if magic == _TENSOR_MAGIC:
        return "tensor"
    raise ConfigError(f"{path}: unrecognized file magic {magic!r}")
