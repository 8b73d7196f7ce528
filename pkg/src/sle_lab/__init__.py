"""Numerical laboratory for annulus and whole-plane Loewner evolutions."""
