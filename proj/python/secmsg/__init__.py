"""Encrypted message passing: AEAD framing, benchmark statistics and performance models."""

from ._secmsg import *  # noqa: F401,F403
from ._secmsg import __doc__  # noqa: F401
