from typing import NamedTuple

import numpy as np

__all__ = ["Batch", "ReplayBuffer"]


class Batch(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO ring of ``(s, a, r, s')`` transitions.

    Storage is allocated on the first push, sized from that transition.
    Sampling is uniform with replacement.
    """

    def __init__(self, capacity=250_000):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.cursor = 0
        self.size = 0
        self._s = self._a = self._r = self._s2 = None

    def __len__(self):
        return self.size

    def push(self, s, a, r, s_next):
        s = np.asarray(s, dtype=float).ravel()
        a = np.atleast_1d(np.asarray(a, dtype=float)).ravel()
        s_next = np.asarray(s_next, dtype=float).ravel()
        if self._s is None:
            self._s = np.zeros((self.capacity, s.size))
            self._a = np.zeros((self.capacity, a.size))
            self._r = np.zeros(self.capacity)
            self._s2 = np.zeros((self.capacity, s.size))
        elif s.size != self._s.shape[1] or a.size != self._a.shape[1] or s_next.size != self._s.shape[1]:
            raise ValueError("transition dimensions differ from earlier transitions")
        i = self.cursor
        self._s[i] = s
        self._a[i] = a
        self._r[i] = r
        self._s2[i] = s_next
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def indices(self, n, rng):
        if self.size < n:
            raise ValueError(f"cannot sample {n} transitions from a buffer holding {self.size}")
        return rng.integers(0, self.size, size=n)

    def sample(self, n, rng):
        idx = self.indices(n, rng)
        return Batch(self._s[idx], self._a[idx], self._r[idx], self._s2[idx])

    def __getitem__(self, i):
        """The ``i``-th oldest stored transition."""
        if not 0 <= i < self.size:
            raise IndexError(i)
        start = self.cursor if self.size == self.capacity else 0
        j = (start + i) % self.capacity
        return Batch(self._s[j], self._a[j], self._r[j], self._s2[j])
