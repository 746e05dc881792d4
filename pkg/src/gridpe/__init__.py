"""Gridded partial-equilibrium simulator of corn-soy production, land use and N leaching."""
