"""Miniature multi-site grid computing stack.

A batch queue per site, queue-neutral remote submission through
gatekeepers with pluggable dialect adapters, proxy-credential security
with clock-skew semantics, digest-verified file staging, and a
deterministic multi-site testbed with scenario replay.
"""

__version__ = "0.1.0"

from .testbed import build_testbed, run_scenario  # noqa: F401
