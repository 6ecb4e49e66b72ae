"""Spin structure, echo coherence and optical pumping of S=1 molecular qubits."""

__version__ = "0.1.0"
