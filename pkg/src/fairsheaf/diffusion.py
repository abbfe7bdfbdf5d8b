"""Sheaf diffusion: discrete layers, continuous heat flow, kernel limit.

The discrete scheme iterates x <- (I - alpha * Delta) x; the continuous
one applies exp(-t * alpha * Delta) through a symmetric
eigendecomposition. Both drive the signal toward the orthogonal
projection onto the kernel of the normalized operator, dissipating
Dirichlet energy along the way (provided alpha keeps the iteration in
the stable regime).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DivergenceError, ShapeError, SizeCapError
from .sheaf import KERNEL_RTOL, SheafLaplacian

# Dense operators above this dimension are refused; use diffuse() instead.
DENSE_DIM_CAP = 5000


@dataclass(frozen=True)
class Discrete:
    n_layers: int

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigurationError(f"n_layers must be >= 1, got {self.n_layers}")


@dataclass(frozen=True)
class Continuous:
    t: float

    def __post_init__(self):
        if self.t <= 0:
            raise ConfigurationError(f"integration time must be positive, got {self.t}")


@dataclass(frozen=True)
class DiffusionConfig:
    """Diffusion strength alpha plus the scheme (layer count or time)."""

    alpha: float
    scheme: Discrete | Continuous

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")


def _check_dimensions(L: SheafLaplacian, x0: np.ndarray) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != L.dimension:
        raise ShapeError(f"signal has length {x0.size}, operator is {L.dimension}")
    if not L.normalized:
        raise ConfigurationError("diffusion expects a degree-normalized Laplacian")
    return x0


def _eigendecomposition(L: SheafLaplacian) -> tuple[np.ndarray, np.ndarray]:
    """Cached symmetric eigendecomposition of the dense operator."""
    cached = getattr(L, "_eigh_cache", None)
    if cached is None:
        cached = np.linalg.eigh(L.matrix.toarray())
        L._eigh_cache = cached
    return cached


def diffuse(L: SheafLaplacian, x0: np.ndarray, cfg: DiffusionConfig) -> np.ndarray:
    """Run the configured diffusion on a signal (virtual nodes included).

    Discrete layers abort with the offending layer index as soon as a
    non-finite value appears, which is how an unstable alpha surfaces.
    """
    x = _check_dimensions(L, x0).copy()
    if isinstance(cfg.scheme, Discrete):
        with np.errstate(over="ignore", invalid="ignore"):
            for layer in range(1, cfg.scheme.n_layers + 1):
                x = x - cfg.alpha * (L.matrix @ x)
                if not np.all(np.isfinite(x)):
                    raise DivergenceError(
                        f"non-finite signal at layer {layer}; "
                        f"alpha={cfg.alpha} exceeds the stable range for this operator",
                        layer=layer,
                    )
        return x
    eigvals, eigvecs = _eigendecomposition(L)
    decay = np.exp(-cfg.scheme.t * cfg.alpha * np.maximum(eigvals, 0.0))
    return eigvecs @ (decay * (eigvecs.T @ x))


def kernel_projection(L: SheafLaplacian, x0: np.ndarray) -> np.ndarray:
    """Orthogonal projection of the signal onto the numerical kernel.

    Eigenvalues below KERNEL_RTOL times the largest count as zero; a
    trivial kernel projects to the zero vector.
    """
    x = _check_dimensions(L, x0)
    eigvals, eigvecs = _eigendecomposition(L)
    lam_max = float(eigvals.max(initial=0.0))
    if lam_max <= 0.0:
        return x.copy()
    kernel = eigvecs[:, eigvals < KERNEL_RTOL * lam_max]
    return kernel @ (kernel.T @ x)


def diffusion_matrix(
    L: SheafLaplacian, cfg: DiffusionConfig, cap: int = DENSE_DIM_CAP
) -> np.ndarray:
    """Dense operator sending x0 to the diffused signal.

    (I - alpha*Delta)^n for the discrete scheme, exp(-t*alpha*Delta) for
    the continuous one. Refuses dimensions above the cap since the
    output is dense; diffuse() stays matrix-free for those.
    """
    if L.dimension > cap:
        raise SizeCapError(
            f"dense diffusion operator of dimension {L.dimension} exceeds the cap "
            f"({cap}); use diffuse() for a matrix-free application"
        )
    if not L.normalized:
        raise ConfigurationError("diffusion expects a degree-normalized Laplacian")
    if isinstance(cfg.scheme, Discrete):
        step = np.eye(L.dimension) - cfg.alpha * L.dense()
        return np.linalg.matrix_power(step, cfg.scheme.n_layers)
    eigvals, eigvecs = _eigendecomposition(L)
    decay = np.exp(-cfg.scheme.t * cfg.alpha * np.maximum(eigvals, 0.0))
    return (eigvecs * decay) @ eigvecs.T
