"""File formats: event files (text + packed binary), PGM images, PLY point
clouds, TUM trajectories and scene description files.

All formats are documented bit-exactly in ``docs/formats.md``.
"""

from __future__ import annotations

import struct

import numpy as np

from evsplat.events import EventStream
from evsplat.geometry import PoseSE3, quat_normalize

EVENT_MAGIC = b"E2ES"
EVENT_VERSION = 1
_RECORD = struct.Struct("<QHHb")  # t_us, x, y, polarity


# ---------------------------------------------------------------------------
# event files
# ---------------------------------------------------------------------------

def write_events_text(path, stream: EventStream) -> None:
    """One `t_us x y p` line per event, with a resolution header comment."""
    with open(path, "w") as f:
        f.write(f"# resolution {stream.width} {stream.height}\n")
        if stream.t_start is not None:
            f.write(f"# span {stream.t_start} {stream.t_end}\n")
        for i in range(len(stream)):
            f.write(f"{stream.t[i]} {stream.x[i]} {stream.y[i]} {stream.polarity[i]}\n")


def write_events_binary(path, stream: EventStream) -> None:
    """16-byte header (magic, version u32, W u16, H u16, reserved u32) then
    little-endian records of u64 t, u16 x, u16 y, i8 polarity."""
    with open(path, "wb") as f:
        f.write(EVENT_MAGIC)
        f.write(struct.pack("<IHHI", EVENT_VERSION, stream.width, stream.height, 0))
        for i in range(len(stream)):
            f.write(_RECORD.pack(int(stream.t[i]), int(stream.x[i]),
                                 int(stream.y[i]), int(stream.polarity[i])))


def read_events(path, width: int | None = None, height: int | None = None) -> EventStream:
    """Read an event file, auto-detecting text vs binary by the magic bytes.

    For text files without a resolution comment, `width`/`height` must be
    given.  Polarity 0 in text files is interpreted as -1.
    """
    with open(path, "rb") as f:
        head = f.read(4)
    if head == EVENT_MAGIC:
        return _read_events_binary(path)
    return _read_events_text(path, width, height)


def _read_events_binary(path) -> EventStream:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != EVENT_MAGIC:
            raise ValueError("bad magic bytes in binary event file")
        version, w, h, _ = struct.unpack("<IHHI", f.read(12))
        if version != EVENT_VERSION:
            raise ValueError(f"unsupported event file version {version}")
        payload = f.read()
    n = len(payload) // _RECORD.size
    if n * _RECORD.size != len(payload):
        raise ValueError("truncated binary event file")
    t = np.empty(n, dtype=np.int64)
    x = np.empty(n, dtype=np.int32)
    y = np.empty(n, dtype=np.int32)
    p = np.empty(n, dtype=np.int8)
    for i, rec in enumerate(_RECORD.iter_unpack(payload)):
        t[i], x[i], y[i], p[i] = rec
    return EventStream(t, x, y, p, w, h)


def _read_events_text(path, width, height) -> EventStream:
    rows = []
    span = None
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if parts[:1] == ["resolution"] and len(parts) == 3:
                    width, height = int(parts[1]), int(parts[2])
                elif parts[:1] == ["span"] and len(parts) == 3:
                    span = (int(parts[1]), int(parts[2]))
                continue
            t_s, x_s, y_s, p_s = line.split()
            p = int(p_s)
            if p == 0:
                p = -1
            rows.append((int(t_s), int(x_s), int(y_s), p))
    if width is None or height is None:
        raise ValueError("text event file has no resolution header; pass width/height")
    t = np.array([r[0] for r in rows], dtype=np.int64)
    x = np.array([r[1] for r in rows], dtype=np.int32)
    y = np.array([r[2] for r in rows], dtype=np.int32)
    p = np.array([r[3] for r in rows], dtype=np.int8)
    kwargs = {}
    if span is not None:
        kwargs = {"t_start": span[0], "t_end": span[1]}
    return EventStream(t, x, y, p, width, height, **kwargs)


# ---------------------------------------------------------------------------
# PGM images (P5, 16-bit, row-major)
# ---------------------------------------------------------------------------

def write_pgm(path, image: np.ndarray, scale: float = 1.0) -> None:
    """Write a float image in [0, scale] as a 16-bit binary PGM."""
    image = np.asarray(image, dtype=np.float64)
    data = np.round(np.clip(image / scale, 0.0, 1.0) * 65535).astype(">u2")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode())
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM back to floats in [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    dtype = ">u2" if maxval > 255 else "u1"
    img = np.frombuffer(data[pos:], dtype=dtype, count=w * h).reshape(h, w)
    return img.astype(np.float64) / maxval


# ---------------------------------------------------------------------------
# TUM trajectories
# ---------------------------------------------------------------------------

def write_tum_trajectory(path, samples) -> None:
    """`timestamp tx ty tz qx qy qz qw` per line; timestamps in seconds."""
    with open(path, "w") as f:
        for ts, pose in samples:
            t = pose.trans
            w, x, y, z = pose.quat
            f.write(f"{ts:.9f} {t[0]:.9f} {t[1]:.9f} {t[2]:.9f} "
                    f"{x:.9f} {y:.9f} {z:.9f} {w:.9f}\n")


def read_tum_trajectory(path):
    """Returns a list of (timestamp_seconds, PoseSE3)."""
    samples = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = [float(v) for v in line.split()]
            if len(vals) != 8:
                raise ValueError("TUM trajectory lines need 8 fields")
            ts, tx, ty, tz, qx, qy, qz, qw = vals
            pose = PoseSE3(quat_normalize([qw, qx, qy, qz]), np.array([tx, ty, tz]))
            samples.append((ts, pose))
    return samples


# ---------------------------------------------------------------------------
# PLY Gaussian clouds
# ---------------------------------------------------------------------------

PLY_PROPS = [
    ("x", "float"), ("y", "float"), ("z", "float"),
    ("scale_0", "float"), ("scale_1", "float"), ("scale_2", "float"),
    ("rot_0", "float"), ("rot_1", "float"), ("rot_2", "float"), ("rot_3", "float"),
    ("opacity", "float"), ("gray", "float"), ("origin_tag", "uchar"),
]


def write_gaussians_ply(path, cloud) -> None:
    """ASCII PLY; rot_0..3 is (w, x, y, z); origin_tag 0=random, 1=edge."""
    n = len(cloud)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {n}\n")
        for name, typ in PLY_PROPS:
            f.write(f"property {typ} {name}\n")
        f.write("end_header\n")
        for i in range(n):
            mu = cloud.mu[i]
            s = cloud.scales[i]
            q = cloud.quat[i]
            tag = int(cloud.origin[i])
            f.write(f"{mu[0]:.9g} {mu[1]:.9g} {mu[2]:.9g} "
                    f"{s[0]:.9g} {s[1]:.9g} {s[2]:.9g} "
                    f"{q[0]:.9g} {q[1]:.9g} {q[2]:.9g} {q[3]:.9g} "
                    f"{cloud.opacity[i]:.9g} {cloud.color[i]:.9g} {tag}\n")


def read_gaussians_ply(path):
    from evsplat.init3d import GaussianCloud
    with open(path) as f:
        line = f.readline().strip()
        if line != "ply":
            raise ValueError("not a PLY file")
        n = None
        names = []
        while True:
            line = f.readline().strip()
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
            elif line.startswith("property"):
                names.append(line.split()[-1])
            elif line == "end_header":
                break
        expected = [name for name, _ in PLY_PROPS]
        if names != expected:
            raise ValueError(f"unexpected PLY properties {names}")
        rows = np.array([[float(v) for v in f.readline().split()] for _ in range(n)],
                        dtype=np.float64).reshape(n, len(expected))
    return GaussianCloud(
        mu=rows[:, 0:3], scales=rows[:, 3:6], quat=rows[:, 6:10],
        opacity=rows[:, 10], color=rows[:, 11],
        origin=rows[:, 12].astype(np.int8))
