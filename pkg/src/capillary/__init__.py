"""Desk-scale Lagrangian solver for free-boundary viscous flow with surface
tension, instrumented so the structures the scheme relies on (energy law,
geometric controls, contraction, compatibility) are checked at runtime."""

__version__ = "0.1.0"
