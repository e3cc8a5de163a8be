"""
edgeselect - Black-box edge AI model selection with conformal guarantees.

This package provides a simulation library and command-line tools for:
- Generating and loading confidence-score / message-size datasets
- Calibrating composite encoder/model pairs with conformal risk control
- Bounding deadline violation probabilities from order statistics
- Fixed and channel-adaptive model selection, with optional set truncation
- Monte Carlo evaluation over Rayleigh-fading links
"""

from edgeselect.version import __version__

__all__ = ["__version__"]
