""" geat: attribution of engineered DNA sequences to their lab of origin.
"""

__version__ = "0.1.0"
