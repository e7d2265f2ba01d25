"""Seeded random streams on top of the counter-based Philox generator.

A stream is identified by ``(seed, path)``; ``path`` is a tuple of non-negative
integers produced by :meth:`RngStream.substream`.  The Philox key is derived
from both through :class:`numpy.random.SeedSequence`, so a stream's draws do
not depend on how many other streams exist or in which order they are used.
"""
from __future__ import annotations

import numpy as np

_TWO53 = float(2 ** 53)
_TINY = np.nextafter(0.0, 1.0)
_ONE_MINUS = np.nextafter(1.0, 0.0)


class RngStream:
    """Single-owner random stream.  Use :meth:`substream` for concurrent work."""

    def __init__(self, seed: int = 0, path: tuple = ()):
        seed = int(seed)
        if seed < 0 or seed >= 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"

    def substream(self, index: int) -> "RngStream":
        if index < 0:
            raise ValueError("substream index must be non-negative")
        return RngStream(self.seed, self.path + (int(index),))

    # -- primitive draws -------------------------------------------------

    def uniform(self, size=None):
        """Uniform draws strictly inside (0, 1)."""
        k = self._gen.integers(0, 2 ** 53, size=size, dtype=np.uint64)
        out = (k.astype(np.float64) + 0.5) / _TWO53
        return float(out) if size is None else out

    def normal(self, mean=0.0, sd=1.0, size=None):
        sd_arr = np.asarray(sd, dtype=float)
        if np.any(~(sd_arr > 0)):
            raise ValueError("sd must be positive")
        if size is None:
            size = np.broadcast(np.asarray(mean), sd_arr).shape or None
        out = mean + sd_arr * self._gen.standard_normal(size=size)
        return float(out) if np.ndim(out) == 0 else out

    def log_gamma(self, shape, size=None):
        """log of Gamma(shape, rate=1) draws.

        Shapes below one use the boosting identity
        ``G(a) = G(a + 1) * U**(1/a)`` evaluated in log space, which stays
        finite for shapes as small as 1e-300.
        """
        shape = np.asarray(shape, dtype=float)
        if np.any(~(shape > 0)) or np.any(~np.isfinite(shape)):
            raise ValueError("gamma shape must be positive and finite")
        if size is not None:
            shape = np.broadcast_to(shape, size)
        small = shape < 1.0
        boosted = np.where(small, shape + 1.0, shape)
        g = self._gen.standard_gamma(boosted)
        with np.errstate(divide="ignore"):
            out = np.log(g)
        if np.any(small):
            u = self.uniform(size=shape.shape) if shape.ndim else self.uniform()
            out = np.where(small, out + np.log(u) / shape, out)
        return float(out) if np.ndim(out) == 0 else out

    def gamma(self, shape, rate=1.0, size=None):
        """Gamma draws with shape/rate parameterisation."""
        rate = np.asarray(rate, dtype=float)
        if np.any(~(rate > 0)):
            raise ValueError("gamma rate must be positive")
        lg = self.log_gamma(shape, size=size)
        out = np.exp(lg - np.log(rate))
        out = np.maximum(out, _TINY)
        return float(out) if np.ndim(out) == 0 else out

    def log_beta(self, a, b, size=None):
        """Return ``(log v, log(1 - v))`` for v ~ Beta(a, b), computed without cancellation."""
        la = self.log_gamma(a, size=size)
        lb = self.log_gamma(b, size=np.shape(la) if size is None else size)
        lse = np.logaddexp(la, lb)
        return la - lse, lb - lse

    def beta(self, a, b, size=None):
        lv, _ = self.log_beta(a, b, size=size)
        out = np.clip(np.exp(lv), _TINY, _ONE_MINUS)
        return float(out) if np.ndim(out) == 0 else out

    def log_dirichlet(self, conc):
        """Log of a Dirichlet draw; rows of a 2-D ``conc`` are independent draws."""
        conc = np.asarray(conc, dtype=float)
        if conc.ndim == 0 or conc.shape[-1] < 1:
            raise ValueError("Dirichlet needs at least one concentration")
        lg = self.log_gamma(conc)
        lg = np.atleast_1d(lg)
        m = lg.max(axis=-1, keepdims=True)
        return lg - (m + np.log(np.exp(lg - m).sum(axis=-1, keepdims=True)))

    def dirichlet(self, conc):
        w = np.exp(self.log_dirichlet(conc))
        return w / w.sum(axis=-1, keepdims=True)

    def categorical_log(self, logw):
        """Draw indices with probability proportional to ``exp(logw)``.

        ``logw`` may be 1-D (one draw) or 2-D (one draw per row).  ``-inf``
        entries have zero probability; a row with no finite entry is an error.
        """
        logw = np.asarray(logw, dtype=float)
        single = logw.ndim == 1
        lw = np.atleast_2d(logw)
        if np.any(np.isnan(lw)):
            raise ValueError("log-weights contain NaN")
        m = lw.max(axis=1, keepdims=True)
        if np.any(~np.isfinite(m)):
            raise ValueError("every log-weight in a row is -inf")
        p = np.exp(lw - m)
        cum = np.cumsum(p, axis=1)
        u = self.uniform(size=lw.shape[0]) * cum[:, -1]
        idx = np.minimum((cum < u[:, None]).sum(axis=1), lw.shape[1] - 1)
        rows = np.arange(lw.shape[0])
        bad = p[rows, idx] == 0
        if np.any(bad):
            # rounding guard: fall back to the last positive-weight entry
            last = lw.shape[1] - 1 - np.argmax((p[bad] > 0)[:, ::-1], axis=1)
            idx[bad] = last
        return int(idx[0]) if single else idx

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
