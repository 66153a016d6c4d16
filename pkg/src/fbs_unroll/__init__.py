"""Unrolled forward-backward-splitting networks and their deep-layer limit.

The package splits into: convex regularizers with closed-form proximal maps
(``regularizers``), the layer dynamics, cell-average / extension operators and
fine-grid limit solver (``dynamics``), training objectives with exact adjoint
gradients and a projected-SGD trainer (``learning``), experiment drivers for
the depth sweep, limit-consistency check and perturbation-stability study
(``experiments``), and a CLI (``cli``).
"""

__version__ = "0.1.0"


class NumericsError(ArithmeticError):
    """Raised when a computation hits non-finite values."""


class TrainingDiverged(NumericsError):
    """Raised when the training loss becomes non-finite.

    Carries the epoch and batch index where divergence was detected.
    """

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
