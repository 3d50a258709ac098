"""Decoding surface-code syndromes under quasiparticle bursts while tracking the burst."""

__version__ = "0.1.0"
