"""Binary checkpoints for fields, trajectories and controls.

Field record (all little-endian)::

    b"NSCOPT1"            7 bytes
    d, n, ncomp           3 x int32
    coefficients          ncomp * n**d complex128 (re, im float64 pairs)

Coefficients are written per component in row-major order over the
fftshifted wavenumber grid, i.e. index ``j`` along an axis is
wavenumber ``j - n/2``.  Trajectory files start with ``b"NSCOPT1T"``,
then ``T`` (float64), ``M`` and the record count (int32), followed by
that many field records.  Controls are plain ``.npy`` arrays.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .fields import Grid, VelocityField

MAGIC = b"NSCOPT1"
TRAJ_MAGIC = b"NSCOPT1T"
_HEADER = struct.Struct("<iii")
_TRAJ_HEADER = struct.Struct("<dii")


def encode_field(y):
    grid = y.grid
    data = np.fft.fftshift(y.coeffs, axes=grid.axes).astype("<c16")
    return MAGIC + _HEADER.pack(grid.d, grid.n, y.coeffs.shape[0]) + data.tobytes()


def decode_field(buf, offset=0, source="field"):
    """Parse one field record; returns ``(field, next_offset)``."""
    end = offset + len(MAGIC) + _HEADER.size
    if len(buf) < end:
        raise CheckpointError(f"{source}: truncated header")
    if buf[offset : offset + len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{source}: bad magic {bytes(buf[offset:offset + len(MAGIC)])!r}")
    d, n, ncomp = _HEADER.unpack_from(buf, offset + len(MAGIC))
    if d not in (2, 3) or n < 4 or n % 2 or ncomp != d:
        raise CheckpointError(f"{source}: invalid shape header d={d} n={n} ncomp={ncomp}")
    count = ncomp * n**d
    stop = end + 16 * count
    if len(buf) < stop:
        raise CheckpointError(f"{source}: expected {count} coefficients, file truncated")
    grid = Grid(d, n)
    raw = np.frombuffer(buf, dtype="<c16", count=count, offset=end).reshape((ncomp,) + grid.shape)
    coeffs = np.fft.ifftshift(raw, axes=grid.axes).astype(complex)
    if not np.all(np.isfinite(coeffs)):
        raise CheckpointError(f"{source}: non-finite coefficients")
    try:
        y = VelocityField(grid, coeffs)
        y.check_invariants(1e-8)
    except Exception as exc:
        raise CheckpointError(f"{source}: coefficients violate field invariants ({exc})") from exc
    return y, stop


def _read(path):
    path = Path(path)
    try:
        return path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc.strerror or exc}") from exc


def save_field(path, y):
    Path(path).write_bytes(encode_field(y))


def load_field(path):
    buf = _read(path)
    y, stop = decode_field(buf, 0, str(path))
    if stop != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - stop} trailing bytes")
    return y


def save_trajectory(path, fields, T, M):
    parts = [TRAJ_MAGIC, _TRAJ_HEADER.pack(float(T), int(M), len(fields))]
    parts.extend(encode_field(f) for f in fields)
    Path(path).write_bytes(b"".join(parts))


def load_trajectory(path):
    """Returns ``(fields, T, M)``."""
    buf = _read(path)
    head = len(TRAJ_MAGIC) + _TRAJ_HEADER.size
    if len(buf) < head or buf[: len(TRAJ_MAGIC)] != TRAJ_MAGIC:
        raise CheckpointError(f"{path}: not a trajectory checkpoint (bad magic)")
    T, M, count = _TRAJ_HEADER.unpack_from(buf, len(TRAJ_MAGIC))
    if not (T > 0 and M >= 2 and count in (M, M + 1)):
        raise CheckpointError(f"{path}: inconsistent time-grid header T={T} M={M} records={count}")
    fields = []
    pos = head
    for j in range(count):
        y, pos = decode_field(buf, pos, f"{path} record {j}")
        fields.append(y)
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    grids = {f.grid for f in fields}
    if len(grids) > 1:
        raise CheckpointError(f"{path}: records on different grids")
    return tuple(fields), T, M


def save_control(path, u):
    np.save(Path(path), np.ascontiguousarray(u.samples), allow_pickle=False)


def load_control(path, shape=None):
    try:
        arr = np.load(Path(path), allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read control {path}: {exc}") from exc
    if shape is not None and arr.shape[1:] != tuple(shape):
        raise CheckpointError(f"{path}: control shape {arr.shape[1:]} does not match space shape {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise CheckpointError(f"{path}: non-finite control samples")
    return arr
