"""Numeric tolerances shared by checks and tests."""

# Identities that hold algebraically (normalization, centering, A = Q - V).
ALGEBRAIC_TOL = 1e-12
# Agreement between two independent computation routes (DP vs enumeration).
ORACLE_TOL = 1e-10
# Relative singular-value cutoff for min-norm least squares.
DEFAULT_SV_CUTOFF = 1e-10
# Largest trajectory count enumerate_trajectories will expand.
DEFAULT_ENUMERATION_CAP = 10**6
