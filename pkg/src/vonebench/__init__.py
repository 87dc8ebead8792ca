"""Biologically constrained V1 front-ends, a corruption benchmark, and
desk-scale training/evaluation tooling built on numpy."""

__version__ = "0.1.0"
