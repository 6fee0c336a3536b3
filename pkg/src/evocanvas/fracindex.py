"""Fractional order keys for z-ordering shapes.

Keys are nonempty strings over the base-36 alphabet [0-9a-z], never ending
in "0", ordered lexicographically. A key denotes a fraction in (0, 1), so a
new key can always be minted between any two existing keys without
renumbering the rest of the document.
"""

from __future__ import annotations

DIGITS = "0123456789abcdefghijklmnopqrstuvwxyz"

_DIGIT_INDEX = {c: i for i, c in enumerate(DIGITS)}


class NoGap(ValueError):
    """Raised when lo >= hi and no key can exist between them."""


def is_order_key(key: object) -> bool:
    """True if ``key`` is a well-formed order key."""
    if not isinstance(key, str) or not key:
        return False
    if key.endswith("0"):
        return False
    return all(c in _DIGIT_INDEX for c in key)


def _midpoint(a: str, b: str | None) -> str:
    """Shortest digit string strictly between ``a`` and ``b`` (fraction semantics).

    ``a`` may be empty (meaning zero); ``b`` of None means one.
    """
    if b is not None:
        n = 0
        while n < len(b) and (a[n] if n < len(a) else "0") == b[n]:
            n += 1
        if n > 0:
            return b[:n] + _midpoint(a[n:], b[n:])
    digit_a = _DIGIT_INDEX[a[0]] if a else 0
    digit_b = _DIGIT_INDEX[b[0]] if b is not None else len(DIGITS)
    if digit_b - digit_a > 1:
        return DIGITS[round(0.5 * (digit_a + digit_b))]
    # Consecutive leading digits: recurse into the remainder.
    if b is not None and len(b) > 1:
        return b[:1]
    return DIGITS[digit_a] + _midpoint(a[1:], None)


def index_between(lo: str | None, hi: str | None) -> str:
    """Mint the shortest order key strictly between ``lo`` and ``hi``.

    ``None`` bounds are open: ``index_between(None, None)`` yields the
    alphabet midpoint ``"i"``. Raises :class:`NoGap` when the bounds are
    malformed or ``lo >= hi``.
    """
    if lo is not None and not is_order_key(lo):
        raise NoGap(f"invalid lower bound key {lo!r}")
    if hi is not None and not is_order_key(hi):
        raise NoGap(f"invalid upper bound key {hi!r}")
    if lo is not None and hi is not None and lo >= hi:
        raise NoGap(f"no key exists between {lo!r} and {hi!r}")
    key = _midpoint(lo or "", hi)
    assert not key.endswith("0")
    return key


def key_sequence(n: int, lo: str | None = None, hi: str | None = None) -> list[str]:
    """Mint ``n`` ascending keys between ``lo`` and ``hi``."""
    keys: list[str] = []
    prev = lo
    for _ in range(n):
        prev = index_between(prev, hi)
        keys.append(prev)
    return keys
