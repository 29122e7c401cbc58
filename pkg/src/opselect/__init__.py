"""Learning-to-improve neighborhood search for the CVRP."""

__version__ = "0.1.0"
