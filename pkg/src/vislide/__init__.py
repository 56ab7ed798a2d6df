"""Variable-impedance aerial sliding: simulator, controller and gain-adaptation learning."""

__version__ = "0.1.0"
