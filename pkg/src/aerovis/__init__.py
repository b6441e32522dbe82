"""aerovis: ground-control stack for AR.Drone-2.0-class quadrotors with a
protocol-faithful software simulator."""

__version__ = "0.1.0"
