"""
Affine iterated function systems: coding maps, Lyapunov spectra,
Ledrappier-Young dimensions and Monte Carlo validation.
"""
