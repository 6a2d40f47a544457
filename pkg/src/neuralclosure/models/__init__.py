"""Reference physical models: Burgers, its reduced form, and plankton cycles."""

from . import biology, burgers, column, rom

__all__ = ["biology", "burgers", "column", "rom"]
