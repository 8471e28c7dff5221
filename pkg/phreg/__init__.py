"""Phase-type regression: inhomogeneous phase-type laws with covariates acting on the intensity."""
from phreg.phase import Family, InhomogeneityTransform, PhaseTypeLaw, StructureKind
from phreg.regression import Dataset, FitConfig, RegressionModel, fit

__version__ = "0.1.0"
