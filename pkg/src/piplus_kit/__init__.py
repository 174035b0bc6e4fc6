"""Policy iteration and its recursively feasible variant on gridded control problems,
with explicit stability and near-optimality certificates and checks against oracles."""

__version__ = "0.1.0"
