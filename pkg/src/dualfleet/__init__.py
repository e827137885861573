"""Joint truck-and-drone delivery planning under takeoff and breakdown risk."""

__version__ = "0.1.0"
