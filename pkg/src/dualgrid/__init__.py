"""Radar-only dynamic occupancy grid with a dual-weight particle filter."""
