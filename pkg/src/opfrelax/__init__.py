"""Convex relaxations of AC optimal power flow: SDP, chordal, QC and their intersection."""

__version__ = "0.1.0"
