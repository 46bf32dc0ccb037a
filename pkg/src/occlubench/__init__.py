"""Occlusion attacks (masks, glasses) against classical face presentation-attack
detectors, with FAR/FRR/HTER and APCER/BPCER/ACER evaluation."""

__version__ = "0.1.0"
