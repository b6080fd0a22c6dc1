# Vehicular edge computing offload optimiser
__version__ = "0.1.0"
