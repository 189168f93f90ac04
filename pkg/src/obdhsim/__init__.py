"""Multitasking OBDH core with simulated subsystems over a virtual serial bus."""

__version__ = "0.1.0"
