"""Binary discrimination of continuously monitored qubits by likelihood filtering."""

__version__ = "0.1.0"
