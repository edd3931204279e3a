"""Privacy amplification backends.

Two seeded extractors compress a corrected key so that an eavesdropper's
residual information becomes negligible:

* ``trevisan_extract``: each output bit evaluates a one-bit extractor (a
  Reed-Solomon code over GF(2^l) concatenated with the Hadamard inner-product
  code) at a seed restriction chosen by a Nisan-Wigderson weak design.
* ``toeplitz_extract``: GF(2) matrix hashing, used as an independent
  cross-check backend.

Output lengths come from ``output_length``, the asymptotic secure fraction
minus a fixed finite-run safety margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .protocol import secure_fraction

EPS_DEFAULT = 1e-6

#: one primitive polynomial (bit mask form) per GF(2^k) degree
_GF2_POLY = {
    1: 0b11,
    2: 0b111,
    3: 0b1011,
    4: 0b10011,
    5: 0b100101,
    6: 0b1000011,
    7: 0b10001001,
    8: 0b100011101,
    9: 0b1000010001,
    10: 0b10000001001,
    11: 0b100000000101,
    12: 0b1000001010011,
    13: 0b10000000011011,
    14: 0b100010001000011,
    15: 0b1000000000000011,
    16: 0b10001000000001011,
}

_GF2_TABLES: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gf2_mul_scalar(a: int, b: int, k: int) -> int:
    """Carry-less multiply in GF(2^k), reduced by the fixed primitive polynomial."""
    poly = _GF2_POLY[k]
    result = 0
    while b:
        if b & 1:
            result ^= a
        b >>= 1
        a <<= 1
        if a >> k:
            a ^= poly
    return result


def _gf2_tables(k: int) -> tuple[np.ndarray, np.ndarray]:
    """Log/antilog tables for GF(2^k) with the generator x."""
    if k not in _GF2_TABLES:
        if k not in _GF2_POLY:
            raise ValueError(f"GF(2^{k}) not supported (k up to 16)")
        size = 1 << k
        exp = np.zeros(2 * size, dtype=np.int64)
        log = np.zeros(size, dtype=np.int64)
        x = 1
        for i in range(size - 1):
            exp[i] = x
            log[x] = i
            x = _gf2_mul_scalar(x, 2, k)
        exp[size - 1 : 2 * size - 2] = exp[: size - 1]
        _GF2_TABLES[k] = (exp, log)
    return _GF2_TABLES[k]


def _gf2_mul_vec(a: np.ndarray, b: np.ndarray, k: int) -> np.ndarray:
    """Elementwise GF(2^k) product via log/antilog tables; zeros map to zero."""
    exp, log = _gf2_tables(k)
    out = exp[log[a] + log[b]]
    return np.where((a == 0) | (b == 0), 0, out)


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    for d in range(2, int(math.isqrt(n)) + 1):
        if n % d == 0:
            return False
    return True


class _Field:
    """Arithmetic over GF(t) for t prime or t = 2^k."""

    def __init__(self, t: int):
        if t < 2:
            raise ValueError("field order must be at least 2")
        if _is_prime(t):
            self.t = t
            self.k = 0
        elif t & (t - 1) == 0:
            self.t = t
            self.k = t.bit_length() - 1
            _gf2_tables(self.k)
        else:
            raise ValueError(f"field order must be prime or a power of two, got {t}")

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.k:
            return _gf2_mul_vec(a, b, self.k)
        return (a * b) % self.t

    def add(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.k:
            return a ^ b
        return (a + b) % self.t


@dataclass(frozen=True)
class WeakDesign:
    """Family of m subsets of [t^2], each of size t, with bounded overlaps."""

    sets: np.ndarray  # shape (m, t), int64 indices into [t*t)
    t: int
    degree: int

    @property
    def m(self) -> int:
        return self.sets.shape[0]

    @property
    def overlap_bound(self) -> int:
        # distinct polynomials of degree <= d agree on at most d points
        return self.degree


def nw_weak_design(m: int, t: int, max_degree: int | None = None) -> WeakDesign:
    """Nisan-Wigderson polynomial design.

    Set i collects the points {(a, p_i(a)) : a in GF(t)} of the i-th
    polynomial of degree <= d over GF(t), flattened as a*t + p_i(a).  The
    degree is the smallest d with t^(d+1) >= m unless pinned by
    ``max_degree``, in which case m beyond t^(d+1) is an error.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    field = _Field(t)
    degree = 0
    while t ** (degree + 1) < m:
        degree += 1
    if max_degree is not None:
        if m > t ** (max_degree + 1):
            raise ValueError(f"m={m} exceeds t^(d+1)={t ** (max_degree + 1)} for degree {max_degree}")
        degree = max_degree
    a = np.arange(t, dtype=np.int64)
    sets = np.empty((m, t), dtype=np.int64)
    for i in range(m):
        coeffs = []
        idx = i
        for _ in range(degree + 1):
            coeffs.append(idx % t)
            idx //= t
        # Horner evaluation of p_i over all of GF(t) at once
        val = np.zeros(t, dtype=np.int64)
        for c in reversed(coeffs):
            val = field.add(field.mul(val, a), np.int64(c))
        sets[i] = a * t + val
    return WeakDesign(sets=sets, t=t, degree=degree)


def _bits_to_int(bits: np.ndarray) -> int:
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    return value


def rs_hadamard_params(n: int) -> tuple[int, int]:
    """Field exponent l and chunk count s for the one-bit extractor on n bits.

    l is the smallest exponent with l * 2^l >= n, so the n input bits fit
    into at most 2^l field elements of l bits each.
    """
    if n < 1:
        raise ValueError("input length must be positive")
    ell = 1
    while ell * (1 << ell) < n:
        ell += 1
    if ell > max(_GF2_POLY):
        raise ValueError(f"input of {n} bits exceeds supported field sizes")
    return ell, math.ceil(n / ell)


def trevisan_seed_length(n: int, m: int) -> tuple[int, int]:
    """(design field order t, required seed length t^2) for given n, m."""
    ell, _ = rs_hadamard_params(n)
    t_ext = 2 * ell
    t_design = 1 << (t_ext - 1).bit_length()  # next power of two >= 2l
    return t_design, t_design * t_design


@dataclass(frozen=True)
class ExtractorParams:
    """Input/output sizes and backend selection for one extraction."""

    n: int
    m: int
    eps: float = EPS_DEFAULT
    backend: str = "trevisan"

    def __post_init__(self):
        if not 0 <= self.m <= self.n:
            raise ValueError(f"need 0 <= m <= n, got m={self.m}, n={self.n}")
        if self.backend not in ("trevisan", "toeplitz"):
            raise ValueError(f"unknown backend {self.backend!r}")

    def seed_length(self) -> int:
        if self.backend == "toeplitz":
            return self.n + self.m - 1
        return trevisan_seed_length(self.n, self.m)[1]


def _rs_coefficients(x: np.ndarray, ell: int, s: int) -> np.ndarray:
    """Pack input bits into s big-endian l-bit field elements (zero padded)."""
    padded = np.zeros(s * ell, dtype=np.uint8)
    padded[: len(x)] = x
    weights = 1 << np.arange(ell - 1, -1, -1, dtype=np.int64)
    return padded.reshape(s, ell) @ weights


def trevisan_extract(x, params: ExtractorParams, seed) -> np.ndarray:
    """Trevisan extractor: m output bits from n input bits and a t^2-bit seed.

    Output bit i applies the RS+Hadamard one-bit extractor to x at the seed
    bits selected by weak-design set S_i: the first l selected bits name the
    Reed-Solomon evaluation point, the next l the Hadamard mask.
    """
    x = np.asarray(x, dtype=np.uint8)
    seed = np.asarray(seed, dtype=np.uint8)
    if len(x) != params.n:
        raise ValueError(f"input has {len(x)} bits, params expect {params.n}")
    if params.m == 0:
        return np.zeros(0, dtype=np.uint8)
    ell, s = rs_hadamard_params(params.n)
    t_design, seed_len = trevisan_seed_length(params.n, params.m)
    if len(seed) != seed_len:
        raise ValueError(f"seed has {len(seed)} bits, backend requires {seed_len}")
    design = nw_weak_design(params.m, t_design)

    selected = seed[design.sets]  # (m, t_design)
    weights = (1 << np.arange(ell - 1, -1, -1, dtype=np.int64))
    alphas = selected[:, :ell] @ weights
    betas = selected[:, ell : 2 * ell] @ weights

    coeffs = _rs_coefficients(x, ell, s)
    acc = np.zeros(params.m, dtype=np.int64)
    for j in range(s - 1, -1, -1):
        acc = _gf2_mul_vec(acc, alphas, ell) ^ coeffs[j]
    masked = acc & betas
    # parity of the masked field element = Hadamard code bit
    out = np.zeros(params.m, dtype=np.uint8)
    while masked.any():
        out ^= (masked & 1).astype(np.uint8)
        masked >>= 1
    return out


def toeplitz_extract(x, m: int, seed) -> np.ndarray:
    """GF(2) Toeplitz hashing: output bit i is parity(seed[i:i+n] AND x).

    The seed must hold n + m - 1 bits; successive rows of the hashing matrix
    are successive length-n windows of the seed.
    """
    x = np.asarray(x, dtype=np.uint8)
    seed = np.asarray(seed, dtype=np.uint8)
    n = len(x)
    if m < 0:
        raise ValueError("m must be non-negative")
    if m == 0:
        return np.zeros(0, dtype=np.uint8)
    if len(seed) != n + m - 1:
        raise ValueError(f"seed has {len(seed)} bits, need n + m - 1 = {n + m - 1}")
    if n * m <= 1 << 16:
        counts = np.correlate(seed.astype(np.int64), x.astype(np.int64), mode="valid")
    else:
        counts = np.rint(fftconvolve(seed.astype(float), x[::-1].astype(float), mode="valid"))
    return (counts.astype(np.int64) & 1).astype(np.uint8)


def output_length(
    n_corrected: int,
    q: float,
    s: float,
    f_ec_realized: float,
    eps: float = EPS_DEFAULT,
    qber_max: float = 0.11,
) -> int:
    """Secure output length for a corrected key block.

    floor(n * r(Q, S, f_ec)) minus the eps-dependent safety margin
    4*log2(1/eps), clamped to [0, n].  Zero means the block yields no key.
    """
    rate = secure_fraction(q, s, f_ec_realized, qber_max=qber_max)
    if rate is None:
        return 0
    margin = 4.0 * math.log2(1.0 / eps)
    m = math.floor(n_corrected * rate - margin)
    return max(0, min(m, n_corrected))


def extract(x, params: ExtractorParams, seed) -> np.ndarray:
    """Dispatch to the configured backend."""
    if params.backend == "toeplitz":
        return toeplitz_extract(x, params.m, seed)
    return trevisan_extract(x, params, seed)
