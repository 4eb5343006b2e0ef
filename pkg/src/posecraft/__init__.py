"""Extreme two-view pose estimation from generated intermediate views.

The pipeline bridges a wide-baseline image pair with synthesized frames,
scores the synthetic frames by feature-match support against both inputs,
and estimates the relative camera pose from the best-supported subset.
Generation itself is delegated to pluggable backends (HTTP or in-process);
a self-contained synthetic projective scene backend ships in-tree so the
whole system is testable without any model weights.
"""

__version__ = "0.1.0"
