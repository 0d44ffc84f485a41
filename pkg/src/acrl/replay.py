"""Dual replay: a real buffer for feasible transitions and an augmented buffer
for self-loop penalty transitions, mixed at a decaying ratio."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterator

import numpy as np

from acrl.mdp import EnvState, Preference

DEFAULT_CAPACITY = 1_000_000
DEFAULT_ETA = 0.2
DEFAULT_DECAY_INTERVAL = 10_000
DEFAULT_DECAY_FACTOR = 0.9


class NotWarmedUp(RuntimeError):
    """Sampling requested before the real buffer holds anything."""


@dataclass(frozen=True, eq=False)
class Transition:
    s: EnvState
    a: np.ndarray
    r: float
    c: float
    s_next: EnvState
    done: bool
    lam: Preference

    def __post_init__(self):
        if self.c < 0 and not (self.r == 0.0 and self.s_next.same_point(self.s)):
            raise ValueError("penalty transition must be a zero-reward self-loop")


class Ring:
    """Fixed-capacity FIFO of flat float64 records, stored column-wise."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.ds, self.da = state_dim, action_dim
        self.size = 0
        self.head = 0
        self._alloc = 0
        self.s = self.a = self.s_next = None
        self.r = self.c = self.done = self.lam = self.t = self.t_next = None
        self._grow(min(capacity, 1024))

    def _grow(self, n: int) -> None:
        def resize(old, shape, dtype=np.float64):
            new = np.zeros(shape, dtype=dtype)
            if old is not None:
                new[: old.shape[0]] = old
            return new

        self.s = resize(self.s, (n, self.ds))
        self.a = resize(self.a, (n, self.da))
        self.s_next = resize(self.s_next, (n, self.ds))
        self.r = resize(self.r, n)
        self.c = resize(self.c, n)
        self.done = resize(self.done, n, bool)
        self.lam = resize(self.lam, (n, 2))
        self.t = resize(self.t, n, np.int64)
        self.t_next = resize(self.t_next, n, np.int64)
        self._alloc = n

    def __len__(self) -> int:
        return self.size

    def append(self, s, a, r, c, s_next, done, lam, t=0, t_next=0) -> None:
        i = self.head
        if i >= self._alloc:
            self._grow(min(self.capacity, 2 * self._alloc))
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.c[i] = c
        self.s_next[i] = s_next
        self.done[i] = done
        self.lam[i] = lam
        self.t[i] = t
        self.t_next[i] = t_next
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def oldest_index(self) -> int:
        return self.head if self.size == self.capacity else 0

    def transition(self, i: int) -> Transition:
        lam = self.lam[i]
        return Transition(
            EnvState(self.s[i].copy(), int(self.t[i]), False),
            self.a[i].copy(),
            float(self.r[i]),
            float(self.c[i]),
            EnvState(self.s_next[i].copy(), int(self.t_next[i]), bool(self.done[i])),
            bool(self.done[i]),
            Preference(float(lam[0]), float(lam[1])),
        )


@dataclass(eq=False)
class Batch:
    """Column arrays of a mixed minibatch; indexable as a sequence of ``Transition``."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    c: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    lam: np.ndarray
    from_augmented: np.ndarray
    _rows: list

    def __len__(self) -> int:
        return self.r.shape[0]

    def __getitem__(self, i: int) -> Transition:
        ring, j = self._rows[i]
        return ring.transition(j)

    def __iter__(self) -> Iterator[Transition]:
        return (self[i] for i in range(len(self)))

    @property
    def n_augmented(self) -> int:
        return int(self.from_augmented.sum())


class DualReplay:
    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        capacity: int = DEFAULT_CAPACITY,
        eta: float = DEFAULT_ETA,
        decay_interval: int = DEFAULT_DECAY_INTERVAL,
        decay_factor: float = DEFAULT_DECAY_FACTOR,
    ):
        if not 0.0 <= eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if decay_interval < 1 or not 0.0 < decay_factor <= 1.0:
            raise ValueError("bad decay schedule")
        self.d_r = Ring(capacity, state_dim, action_dim)
        self.d_a = Ring(capacity, state_dim, action_dim)
        self.eta0 = eta
        self.eta = eta
        self.decay_interval = decay_interval
        self.decay_factor = decay_factor
        self.steps_seen = 0

    def push(self, t: Transition) -> None:
        ring = self.d_a if t.c < 0 else self.d_r
        ring.append(t.s.vector, t.a, t.r, t.c, t.s_next.vector, t.done, t.lam.as_array(), t.s.step_index, t.s_next.step_index)

    def push_arrays(self, s, a, r, c, s_next, done, lam, t=0, t_next=0) -> None:
        """Hot-path push without building a ``Transition``; same routing rule."""
        ring = self.d_a if c < 0 else self.d_r
        ring.append(s, a, r, c, s_next, done, lam, t, t_next)

    def tick_decay(self) -> float:
        self.steps_seen += 1
        self.eta = self.eta0 * self.decay_factor ** (self.steps_seen // self.decay_interval)
        return self.eta

    def split(self, batch: int) -> tuple:
        n_a = min(int(np.floor(self.eta * batch)), len(self.d_a))
        return n_a, batch - n_a

    def sample_mixed(self, batch: int, rng: np.random.Generator) -> Batch:
        if batch < 1:
            raise ValueError("batch must be positive")
        if len(self.d_r) == 0:
            raise NotWarmedUp("real buffer is empty")
        n_a, n_r = self.split(batch)
        idx_r = rng.integers(0, len(self.d_r), n_r)
        # without replacement from the (possibly small) augmented buffer
        idx_a = rng.choice(len(self.d_a), n_a, replace=False) if n_a else np.zeros(0, dtype=np.int64)

        def cat(name):
            return np.concatenate([getattr(self.d_r, name)[idx_r], getattr(self.d_a, name)[idx_a]])

        rows = [(self.d_r, int(i)) for i in idx_r] + [(self.d_a, int(i)) for i in idx_a]
        flag = np.zeros(batch, dtype=bool)
        flag[n_r:] = True
        return Batch(cat("s"), cat("a"), cat("r"), cat("c"), cat("s_next"), cat("done"), cat("lam"), flag, rows)

    # ------------------------------------------------------------------
    # checkpoint: b"ACRLBUF\0", u32 version, header, then per ring
    # u64 size, u64 head, and `size` records each prefixed by u32 byte length

    MAGIC = b"ACRLBUF\0"
    VERSION = 1
    _HEAD = struct.Struct("<IIIQddIdQ")  # version ds da capacity eta0 eta interval factor steps

    def save(self, path_or_file) -> None:
        out = [self.MAGIC, self._HEAD.pack(self.VERSION, self.d_r.ds, self.d_r.da, self.d_r.capacity, self.eta0, self.eta, self.decay_interval, self.decay_factor, self.steps_seen)]
        for ring in (self.d_r, self.d_a):
            out.append(struct.pack("<QQ", ring.size, ring.head))
            for i in range(ring.size):
                rec = np.concatenate([ring.s[i], ring.a[i], [ring.r[i], ring.c[i]], ring.s_next[i], [float(ring.done[i])], ring.lam[i], [ring.t[i], ring.t_next[i]]]).astype("<f8").tobytes()
                out.append(struct.pack("<I", len(rec)))
                out.append(rec)
        data = b"".join(out)
        if hasattr(path_or_file, "write"):
            path_or_file.write(data)
        else:
            with open(path_or_file, "wb") as fh:
                fh.write(data)

    @classmethod
    def load(cls, path_or_file) -> "DualReplay":
        fh: BinaryIO = path_or_file if hasattr(path_or_file, "read") else open(path_or_file, "rb")
        try:
            data = fh.read()
        finally:
            if fh is not path_or_file:
                fh.close()
        if not data.startswith(cls.MAGIC):
            raise ValueError("not an acrl replay checkpoint")
        off = len(cls.MAGIC)
        version, ds, da, cap, eta0, eta, interval, factor, steps = cls._HEAD.unpack_from(data, off)
        if version != cls.VERSION:
            raise ValueError(f"unsupported replay checkpoint version {version}")
        off += cls._HEAD.size
        buf = cls(ds, da, cap, eta0, interval, factor)
        buf.eta, buf.steps_seen = eta, steps
        for ring in (buf.d_r, buf.d_a):
            size, head = struct.unpack_from("<QQ", data, off)
            off += 16
            if size > ring._alloc:
                ring._grow(size)
            for i in range(size):
                (n,) = struct.unpack_from("<I", data, off)
                off += 4
                rec = np.frombuffer(data, dtype="<f8", count=n // 8, offset=off)
                off += n
                k = 0
                ring.s[i] = rec[k : k + ds]; k += ds
                ring.a[i] = rec[k : k + da]; k += da
                ring.r[i], ring.c[i] = rec[k], rec[k + 1]; k += 2
                ring.s_next[i] = rec[k : k + ds]; k += ds
                ring.done[i] = rec[k] != 0.0; k += 1
                ring.lam[i] = rec[k : k + 2]; k += 2
                ring.t[i], ring.t_next[i] = int(rec[k]), int(rec[k + 1])
            ring.size, ring.head = size, head
        return buf
