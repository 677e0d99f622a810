"""Asymptotic mean value Laplacian laboratory."""
