"""
Exception hierarchy for the debiased ATE package

Every error carries the name of the module that raised it so messages surfacing
at the command line read "[module] message".
"""


class DebiasATEError(Exception):
    """Base class for all package errors"""

    module = "debias_ate"

    def __init__(self, message: str, module: str = None):
        super().__init__(message)
        self.message = message
        if module is not None:
            self.module = module

    def __str__(self):
        return f"[{self.module}] {self.message}"


class DataValidationError(DebiasATEError, ValueError):
    """Input data violates an ObservationalDataset invariant"""

    module = "data_model"


class PropensityFitError(DebiasATEError):
    """Logistic regression for the propensity score could not be fitted"""

    module = "propensity"


class FactorizationError(DebiasATEError):
    """A Gram or covariance matrix stayed non-factorizable after jitter"""

    module = "kernels"

    def __init__(self, message: str, params=None, module: str = None):
        super().__init__(message, module)
        self.params = params


class HyperparameterOptimizationError(DebiasATEError):
    """Every restart of the marginal likelihood optimization failed"""

    module = "gp_engine"


class SamplingError(DebiasATEError):
    """The effect posterior could not be sampled as requested"""

    module = "treatment_effect"


class BaselineError(DebiasATEError):
    """A baseline estimator was given data it cannot handle"""

    module = "treatment_effect"


class GeneratorError(DebiasATEError, ValueError):
    """Invalid arguments to a dataset generator"""

    module = "simgen"


class ConfigurationError(DebiasATEError, ValueError):
    """Invalid benchmark or command line configuration"""

    module = "harness"


class ReplicationFailureError(DebiasATEError):
    """Too many replications failed for at least one method"""

    module = "harness"

    def __init__(self, message: str, failures: dict = None):
        super().__init__(message)
        self.failures = dict(failures or {})
