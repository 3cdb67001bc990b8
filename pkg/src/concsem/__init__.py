"""Event-structure semantics for non-deterministic, probabilistic and quantum concurrent programs."""

from .lang import Flavor, parse, pretty

__all__ = ["Flavor", "parse", "pretty"]
