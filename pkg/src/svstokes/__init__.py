"""Scott-Vogelius (P4 / discontinuous P3) Stokes solver with singular-vertex
diagnostics and jump-based removal of spurious pressure modes."""

__version__ = "0.1.0"
