"""Simulation services - mesh, material, cones, assembly, solver, stepping, energy."""
