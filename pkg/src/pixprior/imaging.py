"""Forward models, measurement simulation and measurement-consistency projections.

Images are float64 numpy arrays of shape ``(H, W)`` or ``(H, W, C)`` with
intensities nominally in ``[0, 1]``. Every operator acts on a single channel;
multi-channel images are measured channel by channel, either with one shared
operator or with a sequence holding one operator per channel. Vectorization
is row-major throughout (``x = X.ravel()``).
"""
from dataclasses import dataclass, field

import numpy as np

from . import container
from .errors import ContractError, FormatError, ParameterError

ORTHONORMAL_TOL = 1e-10


def as_rng(seed):
    """Return a numpy Generator for an int seed, a SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


def _check_orthonormal_rows(matrix):
    gram = matrix @ matrix.T
    return float(np.max(np.abs(gram - np.eye(matrix.shape[0])))) <= ORTHONORMAL_TOL


def channels_of(image):
    """Split an image into a list of 2-D channel arrays."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return [image]
    if image.ndim == 3:
        return [image[..., c] for c in range(image.shape[2])]
    raise ParameterError(f"images must be 2-D or 3-D, got shape {image.shape}")


def merge_channels(chans, like):
    if np.ndim(like) == 2:
        return chans[0]
    return np.stack(chans, axis=-1)


# --------------------------------------------------------------------- operators


@dataclass(frozen=True, eq=False)
class MaskOperator:
    """Binary pixel mask; ``1`` marks an observed pixel."""

    mask: np.ndarray

    def __post_init__(self):
        m = _frozen(self.mask)
        if m.ndim != 2:
            raise ParameterError("mask must be 2-D (shared across channels)")
        if not np.all((m == 0) | (m == 1)):
            raise ParameterError("mask entries must be 0 or 1")
        object.__setattr__(self, "mask", m)

    @property
    def image_shape(self):
        return self.mask.shape

    @property
    def measurement_count(self):
        return int(self.mask.sum())

    def _check(self, x):
        if x.shape != self.mask.shape:
            raise ParameterError(f"image shape {x.shape} != mask shape {self.mask.shape}")

    def forward(self, x):
        self._check(x)
        return self.mask * x

    def adjoint(self, y):
        self._check(y)
        return self.mask * y

    def project(self, h, y):
        self._check(h)
        self._check(y)
        return np.where(self.mask == 1, y, h)

    def norm_sq(self):
        return 1.0 if self.mask.any() else 0.0

    def as_matrix(self):
        """Rows of the identity for observed pixels."""
        idx = np.flatnonzero(self.mask.ravel())
        out = np.zeros((idx.size, self.mask.size))
        out[np.arange(idx.size), idx] = 1.0
        return out

    def measurement_vector(self, y):
        return np.asarray(y).ravel()[np.flatnonzero(self.mask.ravel())]


@dataclass(frozen=True, eq=False)
class DenseSensingOperator:
    """Single-pixel-camera operator ``y = Phi @ X.ravel()``."""

    matrix: np.ndarray
    image_shape: tuple
    row_orthonormal: bool = False

    def __post_init__(self):
        m = _frozen(self.matrix)
        shape = tuple(int(s) for s in self.image_shape)
        if m.ndim != 2 or m.shape[1] != shape[0] * shape[1]:
            raise ParameterError(f"matrix {m.shape} does not match image shape {shape}")
        if m.shape[0] > m.shape[1]:
            raise ParameterError("more rows than pixels")
        if self.row_orthonormal and not _check_orthonormal_rows(m):
            raise ContractError("row_orthonormal set but Phi Phi^T deviates from I")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "image_shape", shape)

    @property
    def rows(self):
        return self.matrix.shape[0]

    @property
    def cols(self):
        return self.matrix.shape[1]

    measurement_count = rows

    def forward(self, x):
        if x.shape != self.image_shape:
            raise ParameterError(f"image shape {x.shape} != operator image shape {self.image_shape}")
        return self.matrix @ x.ravel()

    def adjoint(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.rows,):
            raise ParameterError(f"measurement shape {y.shape} != ({self.rows},)")
        return (self.matrix.T @ y).reshape(self.image_shape)

    def project(self, h, y):
        if not self.row_orthonormal:
            raise ContractError("hard projection needs a row-orthonormal operator; use the soft or ALM solver")
        return h - self.adjoint(self.forward(h) - y)

    def norm_sq(self):
        if self.row_orthonormal:
            return 1.0
        return float(np.linalg.norm(self.matrix, 2) ** 2)

    def as_matrix(self):
        return np.array(self.matrix)

    def measurement_vector(self, y):
        return np.asarray(y).ravel()


@dataclass(frozen=True, eq=False)
class RowSensingOperator:
    """LiSens line-sensor operator ``Y = Phi @ X`` (multiplexes image rows)."""

    matrix: np.ndarray
    row_orthonormal: bool = False
    width: int = None

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.ndim != 2:
            raise ParameterError("matrix must be 2-D")
        if m.shape[0] > m.shape[1]:
            raise ParameterError("more rows than image rows")
        if self.row_orthonormal and not _check_orthonormal_rows(m):
            raise ContractError("row_orthonormal set but Phi Phi^T deviates from I")
        object.__setattr__(self, "matrix", m)

    @property
    def rows(self):
        return self.matrix.shape[0]

    @property
    def cols(self):
        return self.matrix.shape[1]

    @property
    def measurement_count(self):
        return self.rows * (self.width or self.cols)

    def forward(self, x):
        if x.ndim != 2 or x.shape[0] != self.cols:
            raise ParameterError(f"image with {np.shape(x)[0]} rows, operator expects {self.cols}")
        return self.matrix @ x

    def adjoint(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 2 or y.shape[0] != self.rows:
            raise ParameterError(f"measurement shape {y.shape} incompatible with {self.rows} rows")
        return self.matrix.T @ y

    def project(self, h, y):
        if not self.row_orthonormal:
            raise ContractError("hard projection needs a row-orthonormal operator; use the soft or ALM solver")
        return h - self.adjoint(self.forward(h) - y)

    def norm_sq(self):
        if self.row_orthonormal:
            return 1.0
        return float(np.linalg.norm(self.matrix, 2) ** 2)

    def as_matrix(self, width):
        # vec_r(Phi X) = (Phi kron I_w) vec_r(X)
        return np.kron(self.matrix, np.eye(width))

    def measurement_vector(self, y):
        return np.asarray(y).ravel()


@dataclass(frozen=True, eq=False)
class SeparableOperator:
    """FlatCam operator ``Y = Phi_L @ X @ Phi_R.T``."""

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left, right = _frozen(self.left), _frozen(self.right)
        if left.ndim != 2 or right.ndim != 2:
            raise ParameterError("left and right must be 2-D matrices")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def image_shape(self):
        return (self.left.shape[1], self.right.shape[1])

    @property
    def measurement_count(self):
        return self.left.shape[0] * self.right.shape[0]

    def forward(self, x):
        if x.shape != self.image_shape:
            raise ParameterError(f"image shape {x.shape} != operator image shape {self.image_shape}")
        return self.left @ x @ self.right.T

    def adjoint(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.left.shape[0], self.right.shape[0]):
            raise ParameterError(f"measurement shape {y.shape} incompatible with operator")
        return self.left.T @ y @ self.right

    def norm_sq(self):
        return float(np.linalg.norm(self.left, 2) ** 2 * np.linalg.norm(self.right, 2) ** 2)

    def as_matrix(self):
        return np.kron(self.left, self.right)

    def measurement_vector(self, y):
        return np.asarray(y).ravel()


def dense_matrix(op, image_shape):
    """Dense matrix of a single-channel operator acting on ``X.ravel()``."""
    if isinstance(op, RowSensingOperator):
        return op.as_matrix(image_shape[1])
    return op.as_matrix()


# ------------------------------------------------------------------ measurements


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Measurements of every channel of an image.

    Attributes:
        layout (str): ``"vector"`` for SPC, ``"matrix"`` for the mask, LiSens
            and FlatCam models.
        per_channel (tuple): one array per image channel.
    """

    layout: str
    per_channel: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.layout not in ("vector", "matrix"):
            raise ParameterError(f"unknown layout {self.layout!r}")
        object.__setattr__(self, "per_channel", tuple(_frozen(v) for v in self.per_channel))

    @property
    def values(self):
        """The single-channel measurement, or a channel-last stack."""
        if len(self.per_channel) == 1:
            return self.per_channel[0]
        return np.stack(self.per_channel, axis=-1)

    def __len__(self):
        return len(self.per_channel)


def _layout(op):
    return "vector" if isinstance(op, DenseSensingOperator) else "matrix"


def operators_for(ops, n_channels):
    if isinstance(ops, (list, tuple)):
        if len(ops) != n_channels:
            raise ParameterError(f"{len(ops)} operators for {n_channels} channels")
        return list(ops)
    return [ops] * n_channels


def measurements_for(y, n_channels):
    if isinstance(y, MeasurementSet):
        chans = list(y.per_channel)
    elif isinstance(y, (list, tuple)):
        chans = [np.asarray(v, dtype=np.float64) for v in y]
    else:
        y = np.asarray(y, dtype=np.float64)
        chans = [y] if n_channels == 1 else [y[..., c] for c in range(y.shape[-1])]
    if len(chans) != n_channels:
        raise ParameterError(f"{len(chans)} measurement channels for {n_channels} image channels")
    return chans


def measure(ops, image):
    """Apply one operator per channel and collect a MeasurementSet."""
    chans = channels_of(image)
    ops = operators_for(ops, len(chans))
    return MeasurementSet(_layout(ops[0]), tuple(op.forward(x) for op, x in zip(ops, chans)))


def make_mask(height, width, missing_fraction, rng_seed):
    """Random inpainting mask with exactly ``round(missing_fraction * H * W)`` zeros."""
    if not 0.0 <= missing_fraction <= 1.0:
        raise ParameterError(f"missing_fraction must lie in [0, 1], got {missing_fraction}")
    return MaskOperator(exact_count_mask((height, width), missing_fraction, as_rng(rng_seed)))


def exact_count_mask(shape, zero_fraction, rng):
    n = int(np.prod(shape))
    zeros = int(round(zero_fraction * n))
    flat = np.ones(n)
    flat[rng.choice(n, size=zeros, replace=False)] = 0.0
    return flat.reshape(shape)


def apply_mask(image, mask):
    return measure(mask, image)


def orthonormal_rows(m, n, rng):
    """``m`` orthonormal rows in R^n from i.i.d. standard normal draws."""
    gauss = rng.standard_normal((m, n))
    q, r = np.linalg.qr(gauss.T)
    # fix the sign ambiguity of QR so the result is a deterministic function of the draw
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    return q.T


def make_spc_operator(measurements, pixels, rng_seed, image_shape=None):
    """Gaussian SPC matrix with orthonormal rows.

    Args:
        measurements (int): number of rows ``m``.
        pixels (int): number of pixels ``n^2``; the image is assumed square
            unless ``image_shape`` is given.
        rng_seed: seed or Generator.
    """
    if measurements < 1 or measurements > pixels:
        raise ParameterError(f"need 1 <= m <= n^2, got m={measurements}, n^2={pixels}")
    if image_shape is None:
        side = int(round(np.sqrt(pixels)))
        image_shape = (side, side) if side * side == pixels else (1, pixels)
    phi = orthonormal_rows(measurements, pixels, as_rng(rng_seed))
    return DenseSensingOperator(phi, image_shape, row_orthonormal=True)


def make_lisens_operator(measurements, height, rng_seed, width=None):
    if measurements < 1 or measurements > height:
        raise ParameterError(f"need 1 <= m <= {height}, got {measurements}")
    phi = orthonormal_rows(measurements, height, as_rng(rng_seed))
    return RowSensingOperator(phi, row_orthonormal=True, width=width)


def cyclic_pm1_matrix(m, n, rng):
    """Rows are cyclic shifts of a random +-1 sequence, scaled by 1/sqrt(n)."""
    length = max(m, n)
    seq = rng.choice([-1.0, 1.0], size=length)
    idx = (np.arange(m)[:, None] + np.arange(n)[None, :]) % length
    return seq[idx] / np.sqrt(n)


def make_flatcam_operator(m, n, rng_seed, width=None, max_condition=None, max_tries=1000):
    """Separable coded-mask operator for an ``n x width`` scene and ``m x m`` sensor.

    With ``max_condition`` set, sequences are redrawn from the same stream until
    both factors have a 2-norm condition number at most that value.
    """
    width = n if width is None else width
    rng = as_rng(rng_seed)
    for _ in range(max_tries):
        left = cyclic_pm1_matrix(m, n, rng)
        right = cyclic_pm1_matrix(m, width, rng)
        if max_condition is None or (
            np.linalg.cond(left) <= max_condition and np.linalg.cond(right) <= max_condition
        ):
            return SeparableOperator(left, right)
    raise ParameterError(f"no operator with condition <= {max_condition} in {max_tries} draws")


def spc_forward(op, image):
    return measure(op, image)


def lisens_forward(op, image):
    return measure(op, image)


def flatcam_forward(op, image):
    return measure(op, image)


def _project(h, ops, y, cls):
    chans = channels_of(h)
    ops = operators_for(ops, len(chans))
    ys = measurements_for(y, len(chans))
    out = []
    for x, op, yc in zip(chans, ops, ys):
        if not isinstance(op, cls):
            raise ParameterError(f"expected {cls.__name__}, got {type(op).__name__}")
        out.append(op.project(x, yc))
    return merge_channels(out, h)


def project_inpaint(h, mask, y):
    """Keep observed pixels from ``y`` and missing pixels from ``h``."""
    return _project(h, mask, y, MaskOperator)


def project_spc(h, op, y):
    """Closed-form projection onto ``{x : Phi x = y}`` for row-orthonormal ``Phi``."""
    return _project(h, op, y, DenseSensingOperator)


def project_lisens(h, op, y):
    return _project(h, op, y, RowSensingOperator)


def clip_unit(image):
    return np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)


def save_calibration(path, op):
    container.save_matrices(path, [op.left, op.right])


def load_calibration(path, image_shape=None):
    """Load ``Phi_L`` and ``Phi_R`` stored as two consecutive matrix blocks."""
    left, right = container.load_matrices(path, count=2)
    for name, mat in (("left", left), ("right", right)):
        if not np.all(np.isfinite(mat)):
            raise FormatError(f"{name} matrix in {path} has non-finite entries")
    op = SeparableOperator(left, right)
    if image_shape is not None and tuple(image_shape) != op.image_shape:
        raise ParameterError(f"calibration image shape {op.image_shape} != expected {tuple(image_shape)}")
    return op
