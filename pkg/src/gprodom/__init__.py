"""GPR odometry: B-scan conditioning, a two-frame distance network and factor-graph fusion."""

__version__ = "0.1.0"
