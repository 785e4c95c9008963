"""gradelab: shallow-network training stacks with exact curvature,
gradient-descent stability spectra, TV-regularized image fitting, and a
convex reformulation checker for two-layer relu models."""

__version__ = "0.1.0"
