"""Reed-Solomon coding over GF(256) for 512-bit watermark payloads.

The field uses the primitive polynomial x^8 + x^4 + x^3 + x^2 + 1 (0x11D) with
generator alpha = 2.  The code is RS(32, 16) shortened from length 255: 16
data bytes, 16 parity bytes, generator roots alpha^1 .. alpha^16, so up to 8
byte errors per codeword are corrected.  A watermark carries four codewords.
"""
from __future__ import annotations

import numpy as np

PRIMITIVE = 0x11D
N_CODE = 32
K_DATA = 16
N_PARITY = N_CODE - K_DATA
BLOCKS = 4
PAYLOAD_BYTES = BLOCKS * K_DATA


class DecodeError(ValueError):
    """Raised when a received word has more errors than the code can correct."""

    def __init__(self, message: str, block: int | None = None):
        super().__init__(message if block is None else f"block {block}: {message}")
        self.block = block


def _build_tables() -> tuple[list[int], list[int]]:
    exp = [0] * 512
    log = [0] * 256
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= PRIMITIVE
    for i in range(255, 512):
        exp[i] = exp[i - 255]
    return exp, log


EXP, LOG = _build_tables()


def gf_mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return EXP[LOG[a] + LOG[b]]


def gf_div(a: int, b: int) -> int:
    if b == 0:
        raise ZeroDivisionError("division by zero in GF(256)")
    if a == 0:
        return 0
    return EXP[(LOG[a] + 255 - LOG[b]) % 255]


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(256)")
    return EXP[255 - LOG[a]]


def gf_pow(a: int, n: int) -> int:
    if a == 0:
        return 0 if n else 1
    return EXP[(LOG[a] * n) % 255]


# Polynomials below are lists of coefficients, highest degree first, unless
# the name says otherwise.

def poly_mul(p: list[int], q: list[int]) -> list[int]:
    out = [0] * (len(p) + len(q) - 1)
    for j, b in enumerate(q):
        if b == 0:
            continue
        for i, a in enumerate(p):
            out[i + j] ^= gf_mul(a, b)
    return out


def poly_eval(p: list[int], x: int) -> int:
    y = 0
    for c in p:
        y = gf_mul(y, x) ^ c
    return y


def generator_poly(nsym: int = N_PARITY, first_root: int = 1) -> list[int]:
    g = [1]
    for i in range(nsym):
        g = poly_mul(g, [1, gf_pow(2, first_root + i)])
    return g


GENERATOR = generator_poly()


def _as_bytes(data, length: int | None, what: str) -> bytes:
    data = bytes(data)
    if length is not None and len(data) != length:
        raise ValueError(f"{what} must be exactly {length} bytes, got {len(data)}")
    return data


def rs_encode(payload) -> bytes:
    """Systematic encoding: payload followed by the remainder of payload*x^16 mod g."""
    msg = _as_bytes(payload, K_DATA, "payload")
    rem = list(msg) + [0] * N_PARITY
    for i in range(K_DATA):
        coef = rem[i]
        if coef:
            for j in range(1, len(GENERATOR)):
                rem[i + j] ^= gf_mul(GENERATOR[j], coef)
    return msg + bytes(rem[K_DATA:])


def syndromes(word, nsym: int = N_PARITY) -> list[int]:
    w = list(word)
    return [poly_eval(w, gf_pow(2, j + 1)) for j in range(nsym)]


def _berlekamp_massey(synd: list[int]) -> list[int]:
    """Error locator Lambda(x), coefficients lowest degree first."""
    C, B = [1], [1]
    L, m, b = 0, 1, 1
    for n, s in enumerate(synd):
        d = s
        for i in range(1, L + 1):
            d ^= gf_mul(C[i], synd[n - i])
        if d == 0:
            m += 1
            continue
        coef = gf_div(d, b)
        shifted = [0] * m + [gf_mul(coef, x) for x in B]
        prev = list(C)
        C = C + [0] * max(0, len(shifted) - len(C))
        for i, x in enumerate(shifted):
            C[i] ^= x
        if 2 * L <= n:
            L, B, b, m = n + 1 - L, prev, d, 1
        else:
            m += 1
    while len(C) > 1 and C[-1] == 0:
        C.pop()
    return C


def _eval_low(p: list[int], x: int) -> int:
    y = 0
    for c in reversed(p):
        y = gf_mul(y, x) ^ c
    return y


def rs_decode(received, nsym: int = N_PARITY) -> tuple[bytes, int]:
    """Correct up to nsym/2 byte errors.

    Accepts any codeword length up to 255 (the shortened code simply treats
    the missing leading symbols as zeros).  Returns ``(data, corrected)``;
    raises :class:`DecodeError` when the word cannot be corrected.
    """
    word = list(_as_bytes(received, None, "received word"))
    n = len(word)
    if not nsym < n <= 255:
        raise ValueError(f"received word length {n} is not in ({nsym}, 255]")
    synd = syndromes(word, nsym)
    if not any(synd):
        return bytes(word[:n - nsym]), 0

    locator = _berlekamp_massey(synd)
    n_err = len(locator) - 1
    if 2 * n_err > nsym:
        raise DecodeError(f"error locator degree {n_err} exceeds correction capacity {nsym // 2}")

    # Chien search: byte at index k has position n-1-k, locator X = alpha^pos.
    positions = []
    for k in range(n):
        pos = n - 1 - k
        if _eval_low(locator, gf_pow(2, (255 - pos) % 255)) == 0:
            positions.append(k)
    if len(positions) != n_err:
        raise DecodeError(f"found {len(positions)} locator roots for degree {n_err}")

    # Forney with first consecutive root alpha^1: e = Omega(X^-1) / Lambda'(X^-1)
    omega = [0] * nsym
    for i, s in enumerate(synd):
        for j, c in enumerate(locator):
            if i + j < nsym:
                omega[i + j] ^= gf_mul(s, c)
    deriv = [locator[i] if i % 2 == 1 else 0 for i in range(1, len(locator))]
    for k in positions:
        x_inv = gf_pow(2, (255 - (n - 1 - k)) % 255)
        denom = _eval_low(deriv, x_inv)
        if denom == 0:
            raise DecodeError("zero locator derivative")
        word[k] ^= gf_div(_eval_low(omega, x_inv), denom)

    if any(syndromes(word, nsym)):
        raise DecodeError("residual syndrome after correction")
    return bytes(word[:n - nsym]), len(positions)


# --------------------------------------------------------------------------
# 32x32 watermark layout
# --------------------------------------------------------------------------

def watermark_pack(payload) -> np.ndarray:
    """64-byte payload -> 32x32x1 binary watermark.

    Four 16-byte blocks are encoded separately; the 128 coded bytes are laid
    out MSB first in row-major order, so codeword ``b`` fills rows 8b..8b+7.
    """
    data = _as_bytes(payload, PAYLOAD_BYTES, "watermark payload")
    coded = b"".join(rs_encode(data[i * K_DATA:(i + 1) * K_DATA]) for i in range(BLOCKS))
    bits = np.unpackbits(np.frombuffer(coded, dtype=np.uint8))
    return bits.reshape(32, 32, 1).astype(np.float32)


def watermark_bytes(w) -> bytes:
    bits = (np.asarray(w, dtype=np.float64).reshape(-1) >= 0.5).astype(np.uint8)
    if bits.size != 1024:
        raise ValueError(f"watermark must hold 1024 bits, got {bits.size}")
    return np.packbits(bits).tobytes()


def watermark_unpack(w) -> tuple[bytes, int]:
    """Binarize at 0.5, decode all four codewords; returns (payload, corrected bytes)."""
    coded = watermark_bytes(w)
    out, fixed = [], 0
    for i in range(BLOCKS):
        try:
            data, n = rs_decode(coded[i * N_CODE:(i + 1) * N_CODE])
        except DecodeError as exc:
            raise DecodeError(str(exc), block=i) from None
        out.append(data)
        fixed += n
    return b"".join(out), fixed
