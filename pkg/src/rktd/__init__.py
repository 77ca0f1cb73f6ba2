"""Randomized Kronecker tensor decomposition (KTD) for dense numpy tensors."""
from .errors import FormatError, InternalConsistencyError, InvalidArgumentError, KtdError, NumericalError
from .ktd import (
    KtdModel,
    ktd_decompose,
    ktd_inverse_permute_reshape,
    ktd_permute_reshape,
    ktd_reconstruct,
    pt_ktd,
    r_ttr1svd,
    sigma_tail_error,
    ttr1svd,
)
from .randla import SketchConfig, pass_efficient_svd, rsvd, truncated_svd
from .tensor import DimsGrid, kron_tensor

__version__ = "0.1.0"
