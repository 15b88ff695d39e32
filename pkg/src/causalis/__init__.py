"""Process matrices, the quantum SWITCH and time-delocalized subsystems."""

__version__ = "0.1.0"
