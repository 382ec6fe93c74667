"""Revenue-optimal charging-slot auctions for drone fleets."""

__version__ = "0.1.0"
