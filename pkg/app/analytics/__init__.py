"""
Numerical core
Geometry transform, finite elements, transmission solves, energies, minimization and verification probes
"""
