"""
mttrack - multi-step temporal modeling tracker with a numpy autograd core
"""

__version__ = "1.0.0"
