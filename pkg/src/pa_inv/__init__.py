"""Quantum Teichmüller and gl1 invariants of punctured-surface mapping classes at odd roots of unity."""

__version__ = "0.1.0"
