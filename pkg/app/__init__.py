"""
Bell/CHSH Simulation Toolkit Package
"""

__version__ = "1.0.0"
__author__ = "BellSim Team"
