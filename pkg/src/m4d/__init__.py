"""Dynamic Gaussian scene optimizer.

Represents a video as canonical 3-D Gaussians carrying color, per-class
semantic logits, a confidence logit and motion coefficients over a small
set of shared SE(3) motion bases. The renderer composites color,
semantics, depth, confidence and 3-D trajectories in one pass; noisy 2-D
priors (masks, depth, point tracks) supervise the scene through
reprojection losses, and the optimizer refines both the scene and the
priors themselves.
"""

__version__ = "0.1.0"
