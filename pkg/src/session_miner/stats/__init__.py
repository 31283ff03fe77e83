from .gtheory import VarianceDecomposition, variance_components  # noqa: F401
from .regression import (  # noqa: F401
    BicVerdict,
    RegressionFit,
    StepwiseResult,
    add_one,
    bic_band,
    ols,
    stepwise,
    vif,
)
from .moments import SkewReport, pearson, skewness, skewness_and_transform  # noqa: F401
