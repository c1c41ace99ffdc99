"""Moving-target defense against integrity attacks on LQG-controlled plants."""

__version__ = "0.1.0"
