# SBP Lab
__version__ = "1.0.0"
