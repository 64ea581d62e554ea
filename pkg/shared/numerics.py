import zlib
from typing import NamedTuple

import numpy as np
import numpy.typing as npt

from .config import logger
from .exceptions import InvalidArgumentError

Matrix = npt.NDArray[np.float64]
Vector = npt.NDArray[np.float64]

# Поріг для сингулярних чисел: τ = PINV_RTOL * max(σ)
PINV_RTOL = 1e-12


def as_matrix(data, name: str = 'matrix') -> Matrix:
    matrix = np.asarray(data, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(1, -1)
    if matrix.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-dimensional, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return matrix


def as_vector(data, name: str = 'vector') -> Vector:
    vector = np.asarray(data, dtype=np.float64)
    if vector.ndim != 1:
        raise InvalidArgumentError(f"{name} must be 1-dimensional, got shape {vector.shape}")
    if not np.all(np.isfinite(vector)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return vector


# Детермінований генератор: Philox-4x64-10 через SeedSequence(seed);
# дочірні потоки за тегом мають spawn_key=(crc32(tag),) і не перетинаються
class SeededRng:

    ALGORITHM = 'philox-4x64-10'

    def __init__(self, seed: int, spawn_key: tuple[int, ...] = ()):
        if seed < 0 or seed >= 2 ** 64:
            raise InvalidArgumentError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.spawn_key = tuple(spawn_key)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def child(self, tag: str) -> 'SeededRng':
        return SeededRng(self.seed, self.spawn_key + (zlib.crc32(tag.encode('utf-8')),))

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self.generator.normal(0.0, 1.0, size=shape) * scale

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self.generator.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, size=None):
        return self.generator.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, population, size: int, replace: bool = False) -> np.ndarray:
        return self.generator.choice(population, size=size, replace=replace)


def softmax(v) -> Vector:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise InvalidArgumentError("softmax of an empty vector")
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("softmax input contains non-finite values")
    shifted = np.exp(v - np.max(v, axis=-1, keepdims=True))
    return shifted / np.sum(shifted, axis=-1, keepdims=True)


def max_pool_rows(matrix) -> Vector:
    matrix = as_matrix(matrix)
    if matrix.shape[0] == 0:
        raise InvalidArgumentError("max-pooling over zero rows")
    return matrix.max(axis=0)


class CosineResult(NamedTuple):
    value: float
    degenerate: bool


# Косинусна подібність; нульовий вектор дає 0 з прапорцем degenerate
def cosine_similarity(a, b) -> CosineResult:
    a, b = as_vector(a, 'a'), as_vector(b, 'b')
    if a.shape != b.shape:
        raise InvalidArgumentError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    norm = np.linalg.norm(a) * np.linalg.norm(b)
    if norm == 0.0:
        logger.warning("Косинусна подібність нульового вектора: повертаємо 0")
        return CosineResult(0.0, True)
    return CosineResult(float(np.clip(a @ b / norm, -1.0, 1.0)), False)


def rowwise_cosine(a, b) -> tuple[Vector, int]:
    a, b = as_matrix(a, 'a'), as_matrix(b, 'b')
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    norms = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    degenerate = norms == 0.0
    values = np.zeros(a.shape[0])
    ok = ~degenerate
    values[ok] = np.clip(np.einsum('ij,ij->i', a[ok], b[ok]) / norms[ok], -1.0, 1.0)
    return values, int(degenerate.sum())


class Svd(NamedTuple):
    u: Matrix
    s: Vector
    v: Matrix


# Тонкий SVD M = U diag(s) Vᵀ (LAPACK gesdd); s невід'ємні та не зростають
def svd(matrix) -> Svd:
    matrix = as_matrix(matrix)
    if matrix.size == 0:
        k = min(matrix.shape)
        return Svd(np.zeros((matrix.shape[0], k)), np.zeros(k), np.zeros((matrix.shape[1], k)))
    u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    return Svd(u, s, vt.T)


# Псевдообернена Мура-Пенроуза: V Σ⁺ Uᵀ
def pinv(matrix) -> Matrix:
    matrix = as_matrix(matrix)
    u, s, v = svd(matrix)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((matrix.shape[1], matrix.shape[0]))
    tau = PINV_RTOL * s[0]
    s_plus = np.where(s > tau, 1.0 / np.where(s > tau, s, 1.0), 0.0)
    return (v * s_plus) @ u.T


# Розв'язок min ||X W - E|| з мінімальною нормою Фробеніуса
def lstsq_min_norm(x, e) -> Matrix:
    return pinv(x) @ as_matrix(e, 'targets')
