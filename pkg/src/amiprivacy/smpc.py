"""Additive-secret-sharing secure sum among simulated parties.

A secret s is split into n shares mod M = 2^64: n-1 shares are drawn
uniformly and the last is s minus their sum mod M, so any proper subset
of shares is uniform and carries no information. To sum privately, each
party distributes one share of its input to every party, each party sums
what it received (a share of the total), and the partial sums are
combined. The run is recorded in a transcript of every transmitted value
so the audit layer can verify that only shares, never raw secrets, were
sent. Below the participation threshold the protocol aborts before any
share leaves a party.

Honest-but-curious parties only; all parties live in one process and
messages are delivered at round boundaries.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

MODULUS = 2**64

ABORT_NOT_ENOUGH_PARTICIPANTS = "not enough participants"


class SmpcError(Exception):
    pass


class InvalidPartyCount(SmpcError):
    pass


class DuplicateParty(SmpcError):
    pass


class SumOverflow(SmpcError):
    """Decoded result landed in the wrap-around half of the modulus."""


@dataclass(frozen=True, slots=True)
class Share:
    value: int  # in [0, MODULUS)
    origin_party: str
    holder_party: str


@dataclass(frozen=True, slots=True)
class PartyInput:
    party_id: str
    secret: int  # non-negative milli-kWh, < MODULUS/2 for wrap headroom

    def __post_init__(self):
        if not 0 <= self.secret < MODULUS // 2:
            raise ValueError("secret must be a non-negative integer below M/2")


@dataclass(frozen=True, slots=True)
class TranscriptMessage:
    sender: str
    recipient: str
    value: int


@dataclass(frozen=True)
class ProtocolTranscript:
    """Append-only record of every transmitted value plus the outcome."""

    messages: tuple[TranscriptMessage, ...]
    result: int | None
    abort_reason: str | None = None


@dataclass(frozen=True)
class SecureSumResult:
    total: int | None  # milli-kWh, None on abort
    transcript: ProtocolTranscript

    @property
    def aborted(self) -> bool:
        return self.transcript.abort_reason is not None


def share(
    secret: int,
    n: int,
    rng: random.Random,
    origin_party: str = "",
    holders: Sequence[str] | None = None,
) -> list[Share]:
    """Split secret into n additive shares mod M; their sum is the secret."""
    if n < 2:
        raise InvalidPartyCount("need at least 2 shares")
    if holders is None:
        holders = [str(i) for i in range(n)]
    secret %= MODULUS
    values = [rng.randrange(MODULUS) for _ in range(n - 1)]
    values.append((secret - sum(values)) % MODULUS)
    return [
        Share(value=v, origin_party=origin_party, holder_party=h)
        for v, h in zip(values, holders)
    ]


def reconstruct(shares: Sequence[Share]) -> int:
    """Sum a complete share set mod M. Incomplete sets yield garbage by design."""
    return sum(s.value for s in shares) % MODULUS


def secure_sum(
    inputs: Sequence[PartyInput], min_participants: int, rng: random.Random
) -> SecureSumResult:
    """Run the n-party secure sum, or abort below the participation floor.

    Round 1: every party sends one share of its secret to each of the n
    parties (keeping its own by self-delivery). Round 2: each party
    broadcasts its local sum of received shares. The combined partial
    sums equal the plain sum of the inputs, exactly.
    """
    ids = [p.party_id for p in inputs]
    if len(set(ids)) != len(ids):
        raise DuplicateParty("party ids must be distinct")

    if len(inputs) < min_participants:
        transcript = ProtocolTranscript(
            messages=(), result=None, abort_reason=ABORT_NOT_ENOUGH_PARTICIPANTS
        )
        return SecureSumResult(total=None, transcript=transcript)

    n = len(inputs)
    messages: list[TranscriptMessage] = []
    mailboxes: dict[str, list[int]] = {pid: [] for pid in ids}

    for party in inputs:
        shares = share(party.secret, n, rng, origin_party=party.party_id, holders=ids)
        for s in shares:
            messages.append(
                TranscriptMessage(sender=party.party_id, recipient=s.holder_party, value=s.value)
            )
            mailboxes[s.holder_party].append(s.value)

    partials = {pid: sum(mailboxes[pid]) % MODULUS for pid in ids}
    for pid in ids:
        for other in ids:
            if other != pid:
                messages.append(
                    TranscriptMessage(sender=pid, recipient=other, value=partials[pid])
                )

    total = sum(partials.values()) % MODULUS
    if total >= MODULUS // 2:
        raise SumOverflow("secure sum wrapped the modulus; inputs exceeded headroom")
    transcript = ProtocolTranscript(messages=tuple(messages), result=total)
    return SecureSumResult(total=total, transcript=transcript)
