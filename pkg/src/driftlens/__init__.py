"""drift-lens: per-class representation drift diagnostics for sequence
labeling models, plus a synthetic incremental-learning testbed that
exercises classifier-head freezing and background-tag masking end to end.
"""

__version__ = "0.1.0"
