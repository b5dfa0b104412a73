"""DC-balance coding for the serialized off-chip lines.

A transmitted word is conditionally inverted to keep the running ones/zeros
disparity of the line bounded.  The rule: let delta = 2*popcount(w) - 32 be
the word's own disparity contribution; if the line disparity is nonzero and
delta has the same sign, the inverted word is sent (flag set) so the
contribution flips sign.  The invert flag travels on the frame control bits
and the receiver re-inverts, so the decode is exact.
"""

from __future__ import annotations

WORD_MASK = 0xFFFFFFFF


def word_disparity(word: int) -> int:
    """Ones minus zeros over the 32 bits of `word`."""
    return 2 * bin(word & WORD_MASK).count("1") - 32


def dc_balance_encode(word: int, disparity: int) -> tuple[int, int, int]:
    """Encode one word against the running line disparity.

    Returns (transmitted word, invert flag, new running disparity).
    """
    delta = word_disparity(word)
    if disparity != 0 and delta != 0 and (delta > 0) == (disparity > 0):
        return (~word) & WORD_MASK, 1, disparity - delta
    return word & WORD_MASK, 0, disparity + delta


def dc_balance_decode(transmitted: int, invert_flag: int) -> int:
    """Recover the source word from the wire word and the invert flag."""
    if invert_flag:
        return (~transmitted) & WORD_MASK
    return transmitted & WORD_MASK
