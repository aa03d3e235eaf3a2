"""Calibrated constants for bounds that are only known up to O(.).

RANDOM_SAMPLE_C
    Multiplier in the random-sampling coreset size
    ceil((C / eps^2) * (d + ln(1/delta))). With C = 8, eps = 0.2,
    delta = 0.1, d = 2 the size is 861. Calibration run (n = 1000 uniform
    points in a 4 sigma square, 100 seeds, default query grid): kernel
    discrepancy median 0.017, 90th percentile 0.023, worst 0.038, so all
    100 trials were within eps = 0.2. Rerun with
    ``kerneldist bench --suite calibration``.

FEATURE_SAMPLE_C
    Multiplier in k = ceil((C / eps^3) ln(n/delta) ln(ln(n)/(eps delta))).
    With C = 16, eps = 0.2, delta = 0.1, n = 500 the size is 97760. Over
    100 seeds (uniform parents in a 4 sigma square, rho = 24680) the
    certificate never exceeded 2.0e-5 W^2, far below eps W^2.

RFF_DOMAIN_C
    Multiplier in the domain-based feature count
    2 ceil((C d / eps^2) ln(2 Delta / (eps delta))). Chosen equal to the
    constant of the n-based count (32), so it dominates it per dimension.
"""

RANDOM_SAMPLE_C = 8.0
FEATURE_SAMPLE_C = 16.0
RFF_DOMAIN_C = 32.0

# Relative tolerance (times W^2) for clamping a negative D_K^2 radicand.
RADICAND_TOL = 1e-9

# Hard cap on feature dimension.
RHO_MAX = 10_000_000

# Largest dimension accepted by the WSPD estimator.
WSPD_MAX_DIM = 4
