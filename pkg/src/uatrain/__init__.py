"""Unified adversarial training with a generator, discriminator, attacker and classifier.

Subpackages: ``datasets``, ``nets``, ``uae``, ``losses``, ``attacks``,
``trainer``, ``theory``, ``evaluation``, ``config``, ``cli``.
"""

from ._accel import NUMBA_ENABLED

__version__ = "0.1.0"

__all__ = ["NUMBA_ENABLED", "__version__"]
