from typing import TypeVar, Generic, Callable, Deque, Hashable, Optional
from collections import deque

import numpy as np
from numpy.typing import NDArray
from sortedcontainers import SortedKeyList

from Spikekal.Errors import ContractViolation


T = TypeVar("T", bound=Hashable)


class UniquePriorityQueue(Generic[T]):
    """
    按 key 排序且元素唯一的优先级队列, scheduler 的 event queue 使用.

    key 在元素入队期间不能改变, 需要更新优先级时先 remove 再 add.
    """

    def __init__(self, key: Callable[[T], object]):
        self._queue = SortedKeyList(key=key)
        self._set: set[T] = set()

    def add(self, item: T):
        if item in self._set:
            return
        self._queue.add(item)
        self._set.add(item)

    def remove(self, item: T):
        if item not in self._set:
            return
        self._queue.remove(item)
        self._set.remove(item)

    def pop(self) -> T:
        if not self._queue:
            raise IndexError("pop from an empty priority queue")
        item = self._queue.pop(0)
        self._set.remove(item)
        return item

    def peek(self) -> T:
        if not self._queue:
            raise IndexError("peek into an empty priority queue")
        return self._queue[0]

    def __len__(self) -> int:
        return len(self._queue)

    def __bool__(self) -> bool:
        return len(self._queue) > 0

    def __contains__(self, item):
        return item in self._set

    def __iter__(self):
        return iter(self._queue)


class UniqueDeque(Generic[T]):
    # 保持插入顺序, 重复插入忽略; 调度顺序因此是确定的
    def __init__(self) -> None:
        self.deque: Deque[T] = deque()
        self.set: set[T] = set()

    def append(self, item: T) -> None:
        if item not in self.set:
            self.set.add(item)
            self.deque.append(item)

    def popleft(self) -> T:
        item = self.deque.popleft()
        self.set.remove(item)
        return item

    def __contains__(self, item: T) -> bool:
        return item in self.set

    def __len__(self) -> int:
        return len(self.deque)

    def __bool__(self) -> bool:
        return len(self.deque) > 0

    def __iter__(self):
        return iter(self.deque)


U = TypeVar('U')


class ClassProperty(Generic[U]):
    def __init__(self, method: Callable[..., U]):
        self.method = method

    def __get__(self, obj, cls=None) -> U:
        if cls is None:
            cls = type(obj)
        return self.method(cls)


# ---------------------------------------------------------------------------
# array contracts

Vector = NDArray[np.float64]
Matrix = NDArray[np.float64]


def as_vector(value, size: Optional[int] = None, name: str = 'vector') -> Vector:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ContractViolation(f"{name} must be one-dimensional, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ContractViolation(f"{name} must have dimension {size}, got {arr.shape[0]}")
    return arr


def as_matrix(value, shape: Optional[tuple[int, int]] = None, name: str = 'matrix') -> Matrix:
    arr = np.atleast_2d(np.asarray(value, dtype=np.float64))
    if arr.ndim != 2:
        raise ContractViolation(f"{name} must be two-dimensional, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ContractViolation(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    return arr


def symmetrize(P: Matrix) -> Matrix:
    return 0.5 * (P + P.T)


def covariance_factor(cov: Matrix) -> Matrix:
    """
    Lower factor L with L·Lᵀ = cov.

    Cholesky first; PSD-but-singular matrices (Q = 0, rank-deficient Q) fall back
    to an eigendecomposition with negative eigenvalues clamped at zero.
    """
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        eigvals, eigvecs = np.linalg.eigh(symmetrize(cov))
        return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def min_eigenvalue(cov: Matrix) -> float:
    return float(np.linalg.eigvalsh(symmetrize(cov)).min())
