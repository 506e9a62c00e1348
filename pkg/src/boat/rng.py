"""Deterministic random streams.

All randomness flows from one root seed through ``Stream``, a thin wrapper
over the Philox4x32-10 counter generator (``numpy.random.Philox``).  The
derived quantities are pinned to documented constructions rather than to
NumPy's ``Generator`` distribution methods, so streams cannot drift if NumPy
revises its samplers:

* uniforms:     the counter output mapped to [0, 1) doubles
                (``Generator.random``, i.e. 53 high bits / 2**53);
* normals:      Box-Muller over pairs of those uniforms;
* trunc normal: rejection of normals outside +/-``cut`` standard deviations;
* substreams:   Philox keyed by ``SeedSequence(root_seed, spawn_key=words)``
                where ``words`` encodes the label path as uint32 chunks of
                its UTF-8 bytes.

Identical (seed, label path, call sequence) gives identical values on every
platform.
"""

import numpy as np

_MAX_LABEL_BYTES = 4096


def _label_words(label):
    """Encode a str/int label as a tuple of uint32 words (injective)."""
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("integer labels must be non-negative")
        data = int(label).to_bytes(8, "little")
    else:
        data = str(label).encode("utf-8")
        if len(data) > _MAX_LABEL_BYTES:
            raise ValueError("label too long")
    words = [len(data)]
    for i in range(0, len(data), 4):
        words.append(int.from_bytes(data[i:i + 4], "little"))
    return tuple(words)


class Stream:
    """One deterministic Philox4x32-10 stream plus labeled substreams."""

    def __init__(self, seed, _spawn_key=()):
        self.seed = int(seed)
        self._spawn_key = tuple(_spawn_key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self._spawn_key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def child(self, label):
        """Independent substream for ``label``; stable across call order."""
        return Stream(self.seed, self._spawn_key + _label_words(label))

    def uniform(self, shape=()):
        """IID doubles in [0, 1)."""
        return self._gen.random(size=shape)

    def integers(self, low, high, shape=()):
        """IID integers in [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def normal(self, shape=(), dtype=np.float64):
        """IID standard normals via Box-Muller on uniform pairs."""
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u1 = 1.0 - self._gen.random(size=pairs)  # in (0, 1]: log is finite
        u2 = self._gen.random(size=pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        z = z.reshape(shape) if shape else z[0]
        return np.asarray(z, dtype=dtype) if shape else dtype(z)

    def trunc_normal(self, shape, std=1.0, cut=2.0, dtype=np.float64):
        """Normal(0, std) with samples outside +/-cut*std redrawn."""
        x = self.normal(shape, dtype=np.float64)
        flat = np.atleast_1d(x).ravel()
        bad = np.flatnonzero(np.abs(flat) > cut)
        while bad.size:
            flat[bad] = np.atleast_1d(self.normal((bad.size,), dtype=np.float64))
            bad = bad[np.abs(flat[bad]) > cut]
        out = (flat * std).reshape(shape)
        return np.asarray(out, dtype=dtype)

    def choice_without_replacement(self, n, k):
        """k distinct indices from range(n), by partial Fisher-Yates."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} from {n}")
        pool = np.arange(n)
        for i in range(k):
            j = int(self._gen.integers(i, n))
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k].copy()
