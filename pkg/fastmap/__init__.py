"""Adaptive smoothing and thresholding of statistical parametric maps.

`fastmap` detects activation in fMRI t-maps with FAST: the map is smoothed
with a data-driven bandwidth and thresholded with extreme-value cutoffs that
account for the smoothing, repeatedly, until successive activation maps stop
changing. The package also carries the AR-error GLM that builds such maps
from time series, a phantom simulator, and a benchmark against
cluster-extent thresholding.
"""
