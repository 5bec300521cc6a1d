"""Reducibility of quasi-periodically forced linear Schrodinger operators on SU(2) and SO(3).

The operator ``(-Lap + mass) sigma_3 - eps T(lam w t)`` acting on central
functions is conjugated, by a sequence of KAM steps on the time-frequency
lattice, to a diagonal constant-coefficient operator.
"""
__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
