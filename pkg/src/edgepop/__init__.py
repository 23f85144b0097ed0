"""Edge-popup subnetwork search in randomly weighted networks, on a numpy autodiff core."""

__version__ = "0.1.0"
