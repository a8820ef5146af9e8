"""Planner/predictor boundary: grid file format, providers, socket framing.

The planner consumes clearance-probability maps through a provider that
either answers with an AceMap aligned to the queried heightmap or reports
Unavailable, in which case the cycle proceeds without the learned term.
Providers can never mark a path feasible; their output only enters ranking.
"""

from __future__ import annotations

import hashlib
import socket
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ace import AceMap, build_ground_truth_acemap
from .heightmap import HeightMap

MAGIC = b"RVNAVGRD"
VERSION = 1
_HEADER = struct.Struct("<8sI3dIII")  # magic, version, ox, oy, cell, w, h, c


class ParseError(Exception):
    """Malformed grid bytes; the message carries the byte offset."""


class ChannelMismatchError(Exception):
    """Grid carries an unexpected channel count."""


@dataclass
class GridFile:
    origin: tuple        # (x, y) meters
    cell_size: float
    values: np.ndarray   # (h, w) or (h, w, c) float32, NaN = unknown

    @property
    def channels(self):
        return 1 if self.values.ndim == 2 else self.values.shape[2]


def write_grid(grid: GridFile) -> bytes:
    v = np.asarray(grid.values, dtype=np.float32)
    if v.ndim == 2:
        v = v[:, :, None]
    h, w, c = v.shape
    header = _HEADER.pack(MAGIC, VERSION, float(grid.origin[0]),
                          float(grid.origin[1]), float(grid.cell_size), w, h, c)
    return header + v.astype("<f4").tobytes()


def read_grid(data: bytes) -> GridFile:
    if len(data) < _HEADER.size:
        raise ParseError(f"truncated header at offset {len(data)}")
    magic, version, ox, oy, cell, w, h, c = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ParseError("bad magic at offset 0")
    if version != VERSION:
        raise ParseError(f"unsupported version {version} at offset 8")
    if cell <= 0 or w == 0 or h == 0 or c == 0:
        raise ParseError(f"bad header fields at offset {8 + 4}")
    need = _HEADER.size + w * h * c * 4
    if len(data) != need:
        raise ParseError(f"payload length {len(data) - _HEADER.size} != "
                         f"{w * h * c * 4} at offset {_HEADER.size}")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(h, w, c)
    if c == 1:
        values = values[:, :, 0]
    return GridFile((ox, oy), cell, values.copy())


def grid_sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def heightmap_to_grid(hmap: HeightMap) -> GridFile:
    vals = np.where(hmap.known, hmap.heights, np.nan).astype(np.float32)
    return GridFile(tuple(hmap.origin), hmap.cell_size, vals)


def grid_to_heightmap(grid: GridFile) -> HeightMap:
    if grid.channels != 1:
        raise ChannelMismatchError("heightmap grids carry exactly 1 channel")
    vals = np.asarray(grid.values, dtype=float)
    known = np.isfinite(vals)
    h, w = vals.shape
    return HeightMap(grid.origin, grid.cell_size, w, h, vals, known)


def acemap_to_grid(acemap: AceMap) -> GridFile:
    return GridFile(tuple(acemap.origin), acemap.cell_size,
                    acemap.values.astype(np.float32))


def grid_to_acemap(grid: GridFile) -> AceMap:
    if grid.channels != 8:
        raise ChannelMismatchError("clearance grids carry exactly 8 channels")
    vals = np.asarray(grid.values, dtype=float)
    clipped = np.clip(vals, 0.0, 1.0)  # NaN passes through as the sentinel
    return AceMap(np.array(grid.origin, dtype=float), grid.cell_size, clipped)


# --- socket framing -------------------------------------------------------

def send_frame(sock, payload: bytes):
    sock.sendall(struct.pack("<I", len(payload)) + payload)


def recv_frame(sock) -> bytes:
    head = _recv_exact(sock, 4)
    (length,) = struct.unpack("<I", head)
    return _recv_exact(sock, length)


def _recv_exact(sock, n) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed mid-frame")
        buf += chunk
    return buf


def handshake_client(sock):
    sock.sendall(MAGIC + struct.pack("<I", VERSION))
    reply = _recv_exact(sock, len(MAGIC) + 4)
    if reply[:len(MAGIC)] != MAGIC:
        raise ConnectionError("handshake magic mismatch")


def handshake_server(sock):
    hello = _recv_exact(sock, len(MAGIC) + 4)
    if hello[:len(MAGIC)] != MAGIC:
        raise ConnectionError("handshake magic mismatch")
    sock.sendall(MAGIC + struct.pack("<I", VERSION))


# --- providers ------------------------------------------------------------

class NoneProvider:
    """Always Unavailable; the planner runs gradient-only ranking."""

    def request(self, hmap):
        return None

    def close(self):
        pass


class GroundTruthOracle:
    """Runs the real clearance evaluator in bulk: a perfect-prediction bound.

    A nonzero radius crops the evaluation to a square around the map center
    (the rover); candidate paths never sample beyond their horizon, so a
    radius covering the tree keeps the result equivalent and much cheaper.
    """

    def __init__(self, geom, limits, radius=0.0):
        self.geom = geom
        self.limits = limits
        self.radius = radius

    def request(self, hmap):
        target = hmap
        if self.radius > 0.0:
            n = int(self.radius / hmap.cell_size)
            cx, cy = hmap.width // 2, hmap.height // 2
            x0, x1 = max(0, cx - n), min(hmap.width, cx + n)
            y0, y1 = max(0, cy - n), min(hmap.height, cy + n)
            if (x1 - x0 < hmap.width or y1 - y0 < hmap.height) \
                    and x1 - x0 >= 3 and y1 - y0 >= 3:
                target = HeightMap(
                    hmap.origin + np.array([x0, y0]) * hmap.cell_size,
                    hmap.cell_size, x1 - x0, y1 - y0,
                    hmap.heights[y0:y1, x0:x1], hmap.known[y0:y1, x0:x1])
        return build_ground_truth_acemap(target, self.geom, self.limits)

    def close(self):
        pass


class ConstantProvider:
    """Uniform probability on every cell/heading; adversarial test feed."""

    def __init__(self, value):
        self.value = float(value)

    def request(self, hmap):
        vals = np.full((hmap.height, hmap.width, 8), self.value)
        return AceMap(hmap.origin.copy(), hmap.cell_size, np.clip(vals, 0.0, 1.0))

    def close(self):
        pass


class FileBackedProvider:
    """Precomputed predictions keyed by the heightmap grid's content hash."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def request(self, hmap):
        key = grid_sha256(write_grid(heightmap_to_grid(hmap)))
        path = self.directory / f"{key}.grid"
        if not path.exists():
            return None
        try:
            return grid_to_acemap(read_grid(path.read_bytes()))
        except (ParseError, ChannelMismatchError):
            return None

    def close(self):
        pass


class RemoteProvider:
    """Predictor endpoint over a stream socket, one request in flight.

    Request and response are length-prefixed grid frames; any timeout or
    protocol failure makes the cycle proceed without the learned term, so a
    dead predictor degrades ranking but never safety.
    """

    def __init__(self, host, port, deadline=0.5):
        self.address = (host, int(port))
        self.deadline = deadline
        self._sock = None

    def _connect(self):
        sock = socket.create_connection(self.address, timeout=self.deadline)
        sock.settimeout(self.deadline)
        handshake_client(sock)
        self._sock = sock

    def request(self, hmap):
        payload = write_grid(heightmap_to_grid(hmap))
        try:
            if self._sock is None:
                self._connect()
            send_frame(self._sock, payload)
            reply = recv_frame(self._sock)
            return grid_to_acemap(read_grid(reply))
        except (OSError, ConnectionError, ParseError, ChannelMismatchError):
            self.close()
            return None

    def close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None


@dataclass(frozen=True)
class ProviderSpec:
    """Declarative provider config, safe to ship across process boundaries."""
    kind: str = "none"       # none | oracle | const | file | remote
    value: float = 0.0       # const
    directory: str = ""      # file
    host: str = "127.0.0.1"  # remote
    port: int = 0
    deadline: float = 0.5
    oracle_radius: float = 0.0  # 0 = evaluate the full heightmap

    @classmethod
    def parse(cls, text):
        """Parse 'none', 'oracle', 'const:0.5', 'file:DIR', 'remote:HOST:PORT'."""
        if text in ("none", "oracle"):
            return cls(kind=text)
        kind, _, rest = text.partition(":")
        if kind == "const":
            return cls(kind="const", value=float(rest))
        if kind == "file":
            return cls(kind="file", directory=rest)
        if kind == "remote":
            host, _, port = rest.rpartition(":")
            return cls(kind="remote", host=host or "127.0.0.1", port=int(port))
        raise ValueError(f"unknown provider spec: {text!r}")


def make_provider(spec: ProviderSpec, geom=None, limits=None):
    if spec.kind == "none":
        return NoneProvider()
    if spec.kind == "oracle":
        if geom is None or limits is None:
            raise ValueError("oracle provider needs rover geometry and limits")
        return GroundTruthOracle(geom, limits, spec.oracle_radius)
    if spec.kind == "const":
        return ConstantProvider(spec.value)
    if spec.kind == "file":
        return FileBackedProvider(spec.directory)
    if spec.kind == "remote":
        return RemoteProvider(spec.host, spec.port, spec.deadline)
    raise ValueError(f"unknown provider kind: {spec.kind!r}")


def request_acemap(provider, hmap):
    """Ask a provider for a clearance map; None means Unavailable."""
    acemap = provider.request(hmap)
    if acemap is None:
        return None
    vals = acemap.values
    bad = np.isfinite(vals) & ((vals < 0.0) | (vals > 1.0))
    if bad.any():
        vals = np.clip(vals, 0.0, 1.0)
        acemap = AceMap(acemap.origin, acemap.cell_size, vals)
    return acemap
