"""Edge evaluation toolchain for RGB-D capture sessions.

Streams captures over a binary envelope protocol, runs pluggable depth and
lighting models behind a REST contract, renders AR evaluation tasks
(object placement, occlusion plane, point cloud, light probes), computes
the depth/lighting/temporal metric suites, and replays stored sessions
deterministically.
"""

__version__ = "0.1.0"
