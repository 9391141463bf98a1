"""Paillier additively homomorphic encryption.

Keys use the standard simplification g = n + 1, which makes
g^m mod n^2 computable as 1 + m*n. Encryption of m with randomizer r is
c = g^m * r^n mod n^2; decryption is m = L(c^lambda mod n^2) * mu mod n
with L(u) = (u - 1) / n. Multiplying ciphertexts adds plaintexts, and
raising a ciphertext to an integer power multiplies its plaintext, which
together support encrypted aggregation and encrypted billing.

This is an analytics engine, not a hardened crypto product: big-integer
arithmetic is not constant-time, and key sizes below 2048 bits are for
tests only.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from typing import Sequence


class HeError(Exception):
    pass


class PlaintextOutOfRange(HeError):
    pass


class BadRandomizer(HeError):
    pass


class WrongKey(HeError):
    pass


class KeyMismatch(HeError):
    pass


class LengthMismatch(HeError):
    pass


class PrimeGenerationFailure(HeError):
    pass


class InvalidPrimes(HeError):
    pass


class BillingOverflow(HeError):
    """The rate schedule could push the plaintext bill past the modulus."""


@dataclass(frozen=True)
class PaillierPublicKey:
    n: int
    g: int
    key_id: str

    @property
    def n_squared(self) -> int:
        return self.n * self.n


@dataclass(frozen=True)
class PaillierKeypair:
    public: PaillierPublicKey
    lam: int = field(repr=False)  # lcm(p-1, q-1)
    mu: int = field(repr=False)


@dataclass(frozen=True)
class Ciphertext:
    value: int
    key_id: str


@dataclass(frozen=True)
class RateSchedule:
    """Per-interval rates in micro-currency units per milli-kWh."""

    rates: tuple[int, ...]

    def __post_init__(self):
        if any(r < 0 for r in self.rates):
            raise ValueError("rates must be non-negative")


_SMALL_PRIMES = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47]


def _is_probable_prime(n: int, rng: random.Random, rounds: int = 40) -> bool:
    """Miller-Rabin with rng-chosen bases."""
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n == p:
            return True
        if n % p == 0:
            return False
    d = n - 1
    s = 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, rng: random.Random, max_tries: int = 100_000) -> int:
    for _ in range(max_tries):
        candidate = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        if _is_probable_prime(candidate, rng):
            return candidate
    raise PrimeGenerationFailure(f"no {bits}-bit prime after {max_tries} tries")


def _key_id(n: int) -> str:
    return hashlib.sha256(str(n).encode()).hexdigest()[:16]


def _l_function(u: int, n: int) -> int:
    return (u - 1) // n


def keypair_from_primes(p: int, q: int) -> PaillierKeypair:
    """Assemble a keypair from given primes (test builds and keygen only)."""
    rng = random.Random(0)
    if p == q:
        raise InvalidPrimes("p and q must be distinct")
    if not (_is_probable_prime(p, rng) and _is_probable_prime(q, rng)):
        raise InvalidPrimes("p and q must both be prime")
    n = p * q
    if math.gcd(n, (p - 1) * (q - 1)) != 1:
        raise InvalidPrimes("gcd(n, (p-1)(q-1)) must be 1")
    g = n + 1
    lam = math.lcm(p - 1, q - 1)
    n_sq = n * n
    mu = pow(_l_function(pow(g, lam, n_sq), n), -1, n)
    return PaillierKeypair(
        public=PaillierPublicKey(n=n, g=g, key_id=_key_id(n)), lam=lam, mu=mu
    )


def keygen(bits: int, rng: random.Random | None = None) -> PaillierKeypair:
    """Generate a keypair with an n of roughly `bits` bits.

    bits >= 64 is the test-scale floor; use 2048 for anything real.
    """
    if bits < 64:
        raise ValueError("bits must be >= 64")
    rng = rng or random.SystemRandom()
    half = bits // 2
    for _ in range(100):
        p = _random_prime(half, rng)
        q = _random_prime(bits - half, rng)
        if p == q:
            continue
        try:
            return keypair_from_primes(p, q)
        except InvalidPrimes:
            continue
    raise PrimeGenerationFailure("could not assemble a valid keypair")


def draw_randomizer(pub: PaillierPublicKey, rng: random.Random | None = None) -> int:
    """Uniform r in [1, n) with gcd(r, n) = 1, by retry."""
    rng = rng or random.SystemRandom()
    while True:
        r = rng.randrange(1, pub.n)
        if math.gcd(r, pub.n) == 1:
            return r


def encrypt(pub: PaillierPublicKey, m: int, r: int) -> Ciphertext:
    """c = g^m * r^n mod n^2 for m in [0, n) and r coprime to n."""
    if not 0 <= m < pub.n:
        raise PlaintextOutOfRange(f"plaintext must lie in [0, n), got {m}")
    if not 1 <= r < pub.n or math.gcd(r, pub.n) != 1:
        raise BadRandomizer("randomizer must lie in [1, n) and be coprime to n")
    n_sq = pub.n_squared
    # g = n + 1 always, so g^m = 1 + m*n (mod n^2).
    g_to_m = (1 + m * pub.n) % n_sq
    value = g_to_m * pow(r, pub.n, n_sq) % n_sq
    return Ciphertext(value=value, key_id=pub.key_id)


def decrypt(keypair: PaillierKeypair, c: Ciphertext) -> int:
    if c.key_id != keypair.public.key_id:
        raise WrongKey("ciphertext was produced under a different key")
    n = keypair.public.n
    u = pow(c.value, keypair.lam, keypair.public.n_squared)
    return _l_function(u, n) * keypair.mu % n


def add(c1: Ciphertext, c2: Ciphertext, pub: PaillierPublicKey) -> Ciphertext:
    """Ciphertext product = plaintext sum (mod n)."""
    if c1.key_id != c2.key_id or c1.key_id != pub.key_id:
        raise KeyMismatch("ciphertexts must share one key")
    return Ciphertext(value=c1.value * c2.value % pub.n_squared, key_id=pub.key_id)


def scalar_mul(c: Ciphertext, k: int, pub: PaillierPublicKey) -> Ciphertext:
    """Ciphertext power = plaintext scalar multiple: decrypts to k*m mod n."""
    if c.key_id != pub.key_id:
        raise KeyMismatch("ciphertext was produced under a different key")
    if k < 0:
        raise ValueError("scalar must be non-negative")
    return Ciphertext(value=pow(c.value, k, pub.n_squared), key_id=pub.key_id)


def encryption_of_zero(pub: PaillierPublicKey) -> Ciphertext:
    """Canonical encryption of 0 with r = 1 (the fold identity)."""
    return Ciphertext(value=1, key_id=pub.key_id)


def encrypted_aggregate(cts: Sequence[Ciphertext], pub: PaillierPublicKey) -> Ciphertext:
    """Fold of homomorphic addition; exact as long as the plaintext sum < n."""
    result = encryption_of_zero(pub)
    for c in cts:
        result = add(result, c, pub)
    return result


def encrypted_bill(
    usage_cts: Sequence[Ciphertext],
    rates: RateSchedule,
    pub: PaillierPublicKey,
    usage_cap: int | None = None,
) -> Ciphertext:
    """Encrypted dot product of per-interval usage with the rate schedule.

    Only the folded ciphertext is returned, so the key holder decrypts
    the total bill and never the per-interval breakdown. If usage_cap is
    supplied (the declared per-interval plaintext bound), the worst-case
    bill is checked against the modulus up front.
    """
    if len(usage_cts) != len(rates.rates):
        raise LengthMismatch(
            f"{len(usage_cts)} usage ciphertexts vs {len(rates.rates)} rates"
        )
    if usage_cap is not None and sum(rates.rates) * usage_cap >= pub.n:
        raise BillingOverflow("worst-case bill would wrap the plaintext modulus")
    terms = [scalar_mul(c, k, pub) for c, k in zip(usage_cts, rates.rates)]
    return encrypted_aggregate(terms, pub)
