"""Binary Mechanism streaming counters under continual observation.

A stream of bits is summarised by dyadic partial sums.  At step ``t`` the
block at the lowest set bit of ``t`` is finalised, receives one Laplace draw,
and the release is the sum of the noisy blocks at the set bits of ``t``.

:class:`CounterBank` runs many counters in lock-step (one column each) so the
auctions can feed all good counters with one call per bidder step.  Column
``j`` of a bank draws its noise from ``derive_rng(seed, tag, j)``; a scalar
:class:`BinaryCounter` with the same seed is therefore bit-identical to
column 0 of a bank built with the same seed and tag.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from privalloc.core import derive_rng
from privalloc.errors import HorizonExceededError, ParameterError

NOISE_MODES = ("laplace", "off")
_CHUNK = 2048


def noise_scale(epsilon: float, horizon: int) -> float:
    """Laplace scale ``log2(T) / epsilon`` (``log2`` floored at 1 so ``T = 1`` is still noised)."""
    return max(math.log2(horizon), 1.0) / epsilon


def accuracy_bound(epsilon: float, T: int, beta: float) -> float:
    """Error ``alpha`` for which ``Counter(epsilon, T)`` is ``(alpha, beta)``-useful.

    ``(2 sqrt 2 / epsilon) * ln(2 / beta) * sqrt(log2 T) ** 5``.
    """
    if epsilon <= 0:
        raise ParameterError("epsilon must be positive")
    if T < 2:
        raise ParameterError("accuracy_bound needs T >= 2")
    if not 0 < beta < 1:
        raise ParameterError("beta must lie in (0, 1)")
    return (2.0 * math.sqrt(2.0) / epsilon) * math.log(2.0 / beta) * math.sqrt(math.log2(T)) ** 5


def laplace_inverse_cdf(u: np.ndarray, scale: float) -> np.ndarray:
    """Map uniforms on [0, 1) to Laplace(0, scale) draws."""
    u = np.where(u <= 0.0, 2.0**-54, u)
    x = u - 0.5
    return -scale * np.sign(x) * np.log1p(-2.0 * np.abs(x))


@dataclass(frozen=True)
class CounterConfig:
    epsilon: float
    horizon: int
    noise_mode: str = "laplace"
    monotonize: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError("counter epsilon must be positive")
        if self.horizon < 1:
            raise ParameterError("counter horizon must be >= 1")
        if self.noise_mode not in NOISE_MODES:
            raise ParameterError(f"noise_mode must be one of {NOISE_MODES}")


@dataclass(frozen=True)
class CounterState:
    """Snapshot of one counter."""

    t: int
    partial_sums: tuple
    noisy_sums: tuple
    last_release: float

    def exact_prefix(self) -> float:
        """Prefix sum rebuilt from the exact blocks at the set bits of ``t``."""
        return float(sum(self.partial_sums[j] for j in range(len(self.partial_sums)) if self.t >> j & 1))


class CounterBank:
    """``width`` independent Binary Mechanism counters advanced together."""

    def __init__(
        self,
        width: int,
        epsilon: float,
        horizon: int,
        noise_mode: str = "laplace",
        monotonize: bool = False,
        seed: int = 0,
        tag: str = "counter",
    ):
        CounterConfig(epsilon, horizon, noise_mode, monotonize, seed)  # validation
        self.width = int(width)
        self.epsilon = float(epsilon)
        self.horizon = int(horizon)
        self.noise_mode = noise_mode
        self.monotonize = bool(monotonize)
        self.scale = noise_scale(epsilon, horizon)
        levels = max(self.horizon.bit_length(), 1)
        self.t = 0
        self.partial = np.zeros((levels, self.width))
        self.noisy = np.zeros((levels, self.width))
        self.exact = np.zeros(self.width)
        self.last_release = np.full(self.width, -np.inf if monotonize else 0.0)
        self._raw = np.zeros(self.width)
        self._rngs = None
        if noise_mode == "laplace":
            self._rngs = [derive_rng(seed, tag, j) for j in range(self.width)]
            self._buf = np.empty((0, self.width))
            self._pos = 0

    def _next_noise(self) -> np.ndarray:
        if self._pos >= self._buf.shape[0]:
            rows = min(_CHUNK, self.horizon - self.t + 1)
            u = np.column_stack([g.random(rows) for g in self._rngs])
            self._buf = laplace_inverse_cdf(u, self.scale)
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out

    def feed(self, bits) -> np.ndarray:
        """Feed one bit per column and return the released counts (a fresh array)."""
        if self.t >= self.horizon:
            raise HorizonExceededError(f"counter horizon {self.horizon} exhausted")
        self.t += 1
        t = self.t
        i = (t & -t).bit_length() - 1
        bits = np.asarray(bits, dtype=float)
        self.exact += bits
        if i:
            self.partial[i] = self.partial[:i].sum(axis=0) + bits
            self.partial[:i] = 0.0
            self.noisy[:i] = 0.0
        else:
            self.partial[0] = bits
        if self._rngs is None:
            self.noisy[i] = self.partial[i]
        else:
            self.noisy[i] = self.partial[i] + self._next_noise()
        rest = t >> (i + 1)
        if rest:
            idx = [i] + [j for j in range(i + 1, t.bit_length()) if t >> j & 1]
            raw = self.noisy[idx].sum(axis=0)
        else:
            raw = self.noisy[i].copy()
        self._raw = raw
        if self.monotonize:
            raw = np.maximum(self.last_release, raw)
        self.last_release = raw
        return raw.copy()

    def state(self, column: int = 0) -> CounterState:
        last = float(self.last_release[column]) if self.t else 0.0
        return CounterState(
            t=self.t,
            partial_sums=tuple(float(x) for x in self.partial[:, column]),
            noisy_sums=tuple(float(x) for x in self.noisy[:, column]),
            last_release=last,
        )

    def error(self) -> np.ndarray:
        """``|release - exact count|`` per column at the current step."""
        return np.abs(self.last_release - self.exact) if self.t else np.zeros(self.width)


class BinaryCounter:
    """A single Binary Mechanism counter, ``Counter(epsilon, T)``.

    >>> c = BinaryCounter(CounterConfig(epsilon=1.0, horizon=4, noise_mode="off"))
    >>> [c.feed(b) for b in (1, 1, 0, 1)]
    [1.0, 2.0, 2.0, 3.0]
    """

    def __init__(self, config: CounterConfig, trace: bool = False, tag: str = "counter"):
        self.config = config
        self._bank = CounterBank(
            1,
            config.epsilon,
            config.horizon,
            config.noise_mode,
            config.monotonize,
            seed=config.rng_seed,
            tag=tag,
        )
        self.trace = [] if trace else None

    @property
    def t(self) -> int:
        return self._bank.t

    @property
    def exact_count(self) -> float:
        return float(self._bank.exact[0])

    def feed(self, bit: int) -> float:
        if bit not in (0, 1):
            raise ParameterError(f"counter input must be 0 or 1, got {bit!r}")
        out = float(self._bank.feed((bit,))[0])
        if self.trace is not None:
            self.trace.append((self.t, int(bit), self.exact_count, out))
        return out

    def feed_stream(self, bits: Sequence[int]) -> list[float]:
        return [self.feed(b) for b in bits]

    def state(self) -> CounterState:
        return self._bank.state(0)

    def write_trace(self, path: str | Path) -> None:
        if self.trace is None:
            raise ValueError("counter was created without trace=True")
        write_trace_csv(path, self.trace)


def write_trace_csv(path: str | Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "bit", "exact_count", "released_count"])
        for t, bit, exact, rel in rows:
            w.writerow([t, bit, f"{exact:.12g}", f"{rel:.12g}"])


def run_streams(streams: np.ndarray, config: CounterConfig, tag: str = "counter") -> np.ndarray:
    """Run one counter per column of ``streams`` (shape ``T x width``); return releases."""
    streams = np.asarray(streams)
    T, width = streams.shape
    bank = CounterBank(width, config.epsilon, config.horizon, config.noise_mode,
                       config.monotonize, seed=config.rng_seed, tag=tag)
    out = np.empty((T, width))
    for t in range(T):
        out[t] = bank.feed(streams[t])
    return out
