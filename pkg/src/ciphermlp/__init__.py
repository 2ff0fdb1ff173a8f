"""Non-interactive encrypted training of multi-layer perceptrons.

Two interchangeable homomorphic backends implement one SIMD slot-vector
contract: an exact plaintext simulator with full level/depth accounting, and
a desk-scale leveled CKKS implementation with a custodian-mediated debug
bootstrap.  On top sit the slot-grid packing layouts, rotation-based linear
algebra, local-loss block training, and the experiment harness.
"""

from .api import (
    CipherVector,
    DepthLedger,
    Evaluator,
    KeyCustodian,
    PlainVector,
    bootstrap,
    elementwise,
    keygen,
    rotate,
)
from .errors import (
    CapacityError,
    EncodingOverflow,
    HeError,
    IncompatibleOperands,
    InvalidParameters,
    LevelExhausted,
    MissingRotationKey,
    SecurityError,
    SerializationError,
    SnapshotDisabled,
)
from .linalg import ce_matmul, re_matmul, sum_cols, sum_rows
from .nn import (
    EncryptedMLP,
    Hyperparams,
    LocalLossBlock,
    block_backward,
    block_forward,
    build_model,
    loss_gradient,
    poly_relu,
    poly_relu_prime,
    predict,
    train_iteration,
    update_weights,
)
from .packing import (
    Architecture,
    Format,
    GridShape,
    PackedMatrix,
    compute_dims,
    first_column_mask,
    pack,
    required_rotations,
    unpack,
)
from .params import INSECURE, SchemeParams, make_params
from .simbackend import NoiseModel, SimBackend, snapshot

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
