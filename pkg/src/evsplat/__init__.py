"""Event-only, pose-free 3D reconstruction with edge-guided Gaussian splatting.

The package is organized as a small numpy library:

- :mod:`evsplat.events`    -- event streams, event-map accumulation, chunking
- :mod:`evsplat.geometry`  -- SE(3) poses, quaternions, pinhole intrinsics
- :mod:`evsplat.simulator` -- synthetic event-camera simulator (ground-truth oracle)
- :mod:`evsplat.edges`     -- patch-based temporal-coherence edge detection
- :mod:`evsplat.init3d`    -- edge-guided 3D Gaussian initialization
- :mod:`evsplat.render`    -- differentiable CPU Gaussian splatting renderer
- :mod:`evsplat.losses`    -- edge-weighted and structural (DSSIM) losses
- :mod:`evsplat.slam`      -- chunked tracking / bundle-adjustment loop
- :mod:`evsplat.metrics`   -- PSNR / SSIM / ATE evaluation
- :mod:`evsplat.io`        -- event files, PGM, PLY, TUM trajectories
- :mod:`evsplat.config`    -- flat key=value configuration
- :mod:`evsplat.cli`       -- command-line pipeline driver
"""

from evsplat.events import Event, EventMap, EventStream, Chunk, accumulate, chunk_stream, sample_interval
from evsplat.geometry import CameraIntrinsics, PoseSE3

__all__ = [
    "Event",
    "EventMap",
    "EventStream",
    "Chunk",
    "accumulate",
    "chunk_stream",
    "sample_interval",
    "CameraIntrinsics",
    "PoseSE3",
]

__version__ = "0.1.0"
