"""
MEMS Transmission Toolkit
Electrostatic potential, force density and energy minimization for a deflected MEMS plate
"""

__version__ = "1.0.0"
