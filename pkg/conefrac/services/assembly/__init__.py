"""Discrete energies, opening maps and the composed barrier objectives."""
