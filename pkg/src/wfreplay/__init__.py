"""Compile-then-replay web workflow automation.

Workflows are written as prose trigger/action rules. The first run compiles
each rule into a concrete state (page detectors plus a symbolic action
program) and caches it; later runs replay the cache and pay for synthesis
again only for states that UI drift has broken.
"""

from __future__ import annotations

__version__ = "0.1.0"
