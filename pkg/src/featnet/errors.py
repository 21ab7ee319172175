"""Exception types.

Every error carries a short ``category`` string so the command line frontend
can report failures in a machine-readable way.
"""


class FeatnetError(Exception):
    category = "runtime"


class ConfigError(FeatnetError, ValueError):
    category = "config"

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DimensionMismatch(FeatnetError, ValueError):
    category = "dimension_mismatch"


class ConstantColumn(FeatnetError, ValueError):
    category = "constant_column"

    def __init__(self, column):
        self.column = column
        super().__init__(f"column {column} has zero variance")


class NonPositiveSigma(FeatnetError, ValueError):
    category = "non_positive_sigma"


class IndexOutOfRange(FeatnetError, ValueError):
    category = "index_out_of_range"


class MalformedRow(FeatnetError, ValueError):
    category = "malformed_row"

    def __init__(self, line_no, text=""):
        self.line_no = line_no
        super().__init__(f"malformed edge row at line {line_no}: {text!r}")


class ConvergenceFailure(FeatnetError, ArithmeticError):
    category = "convergence_failure"


class NegativePowerWithoutShift(FeatnetError, ValueError):
    category = "negative_power_without_shift"


class InvalidK(FeatnetError, ValueError):
    category = "invalid_k"


class DegenerateEmbedding(FeatnetError, ArithmeticError):
    category = "degenerate_embedding"


class NonConvergence(FeatnetError, ArithmeticError):
    category = "non_convergence"

    def __init__(self, message, delta=None):
        self.delta = delta
        super().__init__(message)


class NonConvergenceWarning(RuntimeWarning):
    pass


class PartitionMismatch(FeatnetError, ValueError):
    category = "partition_mismatch"


class InvalidSizes(FeatnetError, ValueError):
    category = "invalid_sizes"


class SingleClass(FeatnetError, ValueError):
    category = "single_class"


class Divergence(FeatnetError, ArithmeticError):
    category = "divergence"


class ParseError(FeatnetError, ValueError):
    category = "parse_error"

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class LabelMismatch(FeatnetError, ValueError):
    category = "label_mismatch"


class NonFinite(FeatnetError, ValueError):
    category = "non_finite"

    def __init__(self, row, col):
        self.cell = (row, col)
        super().__init__(f"non-finite value at row {row}, column {col}")


class PSDRepairFailed(FeatnetError, ArithmeticError):
    category = "psd_repair_failed"


class InvalidBlockSpec(FeatnetError, ValueError):
    category = "invalid_block_spec"


class FoldTooSmall(FeatnetError, ValueError):
    category = "fold_too_small"
