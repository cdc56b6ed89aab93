"""Complex linear-algebra primitives and seeded randomness shared by all modules.

Complex vectors are plain 1-D ``complex128`` arrays, Hermitian matrices plain
2-D arrays; validation happens at operation boundaries instead of wrapper
types.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError

HERMITIAN_TOL = 1e-9


def derive_stream(*parts) -> int:
    """Map a tuple of tags (ints, strings, ...) to a stable 64-bit stream id.

    Uses blake2b so the mapping is identical across runs, platforms, and
    process layouts, unlike the builtin salted ``hash``.
    """
    digest = hashlib.blake2b(repr(parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class SeededRng:
    """Reproducible random source: (seed, stream_id) fully determines all draws.

    Parallel work splits by stream id, one stream per unit of work; a single
    generator is never shared across workers.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))

    def split(self, *tags) -> "SeededRng":
        """Derive a child stream for a tagged sub-task."""
        return SeededRng(self.seed, derive_stream(self.stream_id, *tags))


def as_generator(rng) -> np.random.Generator:
    """Accept a SeededRng, a numpy Generator, or a bare int seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, SeededRng):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return SeededRng(int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


def standard_complex_normal(rng, shape) -> np.ndarray:
    """I.i.d. standard circular complex Gaussian draws (unit variance per entry)."""
    gen = as_generator(rng)
    return (gen.standard_normal(shape) + 1j * gen.standard_normal(shape)) / np.sqrt(2.0)


def hermitian_defect(m: np.ndarray) -> float:
    """Largest absolute deviation between m and its conjugate transpose."""
    m = np.asarray(m)
    return float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0


def dominant_eigvec(
    m: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Unit-norm eigenvector for the largest eigenvalue of a Hermitian PSD matrix.

    Power iteration from the normalized all-ones vector, with a one-shot
    reseed from a fixed random stream if that start carries essentially no
    energy (Rayleigh quotient stuck below ``tol * ||m||_F`` while the matrix
    is nonzero).  The returned vector satisfies
    ``||m @ phi - (phi^H m phi) phi|| <= tol`` and has its largest-magnitude
    entry rotated to be real positive, which makes results deterministic.

    Raises ``ValueError`` for non-Hermitian input (defect beyond 1e-9) and
    ``ConvergenceError`` (carrying the last Rayleigh quotient) if ``max_iter``
    is exhausted.
    """
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    defect = hermitian_defect(m)
    if defect > HERMITIAN_TOL:
        raise ValueError(f"matrix is not Hermitian: symmetry defect {defect:.3e}")
    m = 0.5 * (m + m.conj().T)

    n = m.shape[0]
    scale = float(np.linalg.norm(m))
    x = np.ones(n, dtype=np.complex128) / np.sqrt(n)
    reseeded = False
    rayleigh = 0.0
    for _ in range(max_iter):
        y = m @ x
        rayleigh = float(np.real(np.vdot(x, y)))
        residual = float(np.linalg.norm(y - rayleigh * x))
        # The ones vector can be (numerically) orthogonal to the dominant
        # eigenspace; a residual test alone would then accept a minor
        # eigenvector, so treat "no energy while the matrix is nonzero"
        # as a stall and reseed once.
        stalled = scale > tol and rayleigh <= tol * scale
        if residual <= tol and not stalled:
            return _fix_phase(x)
        if stalled and not reseeded:
            gen = SeededRng(0x5EED, 31).generator()
            x = standard_complex_normal(gen, n)
            x /= np.linalg.norm(x)
            reseeded = True
            continue
        norm_y = float(np.linalg.norm(y))
        if norm_y == 0.0:
            # Only reachable after a reseed also landed in the null space.
            raise ConvergenceError(
                "power iteration collapsed to the null space",
                rayleigh=rayleigh,
            )
        x = y / norm_y
    raise ConvergenceError(
        f"power iteration did not reach tol={tol:g} in {max_iter} iterations",
        rayleigh=rayleigh,
    )


def _fix_phase(v: np.ndarray) -> np.ndarray:
    v = v / np.linalg.norm(v)
    idx = int(np.argmax(np.abs(v)))
    pivot = v[idx]
    if pivot != 0:
        v = v * (pivot.conjugate() / abs(pivot))
    # Rotation can leave a ~eps imaginary residue on the pivot; that is fine.
    return v


def solve_regularized_normal(a_list, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(sum_k a_k a_k^H + I) x = rhs`` by a direct dense solve.

    The system matrix is Hermitian with eigenvalues >= 1, so the solve is
    well conditioned; the residual stays below ``1e-10 * ||rhs||``.
    """
    rhs = np.asarray(rhs, dtype=np.complex128)
    if rhs.ndim != 1:
        raise ValueError(f"rhs must be a vector, got shape {rhs.shape}")
    n = rhs.shape[0]
    m = np.eye(n, dtype=np.complex128)
    for a in a_list:
        a = np.asarray(a, dtype=np.complex128)
        if a.shape != (n,):
            raise ValueError(
                f"dimension mismatch: vector of shape {a.shape} vs rhs of length {n}"
            )
        m += np.outer(a, a.conj())
    return np.linalg.solve(m, rhs)


class RidgeNormalSolver:
    """Prefactored form of :func:`solve_regularized_normal` for repeated solves.

    The matrix ``sum_k a_k a_k^H + I`` is fixed across the inner iterations
    that use it, so its inverse is formed once (eigenvalues >= 1 keep the
    explicit inverse safe).
    """

    def __init__(self, a_list, dim: int | None = None):
        rows = [np.asarray(a, dtype=np.complex128) for a in a_list]
        if not rows and dim is None:
            raise ValueError("dim is required when a_list is empty")
        n = dim if dim is not None else rows[0].shape[0]
        m = np.eye(n, dtype=np.complex128)
        for a in rows:
            if a.shape != (n,):
                raise ValueError(f"dimension mismatch: {a.shape} vs ({n},)")
            m += np.outer(a, a.conj())
        self._minv_t = np.linalg.inv(m).T

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve for one rhs vector or a batch of rhs rows."""
        rhs = np.asarray(rhs, dtype=np.complex128)
        return rhs @ self._minv_t
