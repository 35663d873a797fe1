"""Hierarchical beamforming codebooks for macro sectors, and a sector simulator."""

__version__ = "0.1.0"
