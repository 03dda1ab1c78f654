"""mask-conditional synthetic satellite imagery and its downstream utility"""

__version__ = "0.4.0"
