"""Simultaneous recovery of the initial value and source of a time-fractional
diffusion-wave equation from two terminal snapshots."""

__version__ = "0.1.0"
