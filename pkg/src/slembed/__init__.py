"""Stuart-Landau oscillator networks minor-embedded into triad graphs."""

__version__ = "0.1.0"
