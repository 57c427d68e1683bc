"""Desk-scale autonomous ship-landing stack: vision, pose, simulation, control."""

__version__ = "0.1.0"
