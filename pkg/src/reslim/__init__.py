"""Resistance networks, local times, metric entropy and Gromov-Hausdorff-type
distances for finite spaces, with random tree samplers."""

__version__ = "0.1.0"
