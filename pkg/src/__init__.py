"""
ShapeBench 1.0 - Shape correspondence benchmarking toolkit
"""

__version__ = "1.0.0"
