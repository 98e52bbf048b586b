"""American Soundex surname coding.

The exact variant implemented here (and therefore shared by the
population synthesizer and the blocking stage, which must agree bit for
bit):

1. uppercase and strip every non A-Z character;
2. keep the first letter;
3. code the remaining letters B,F,P,V -> 1, C,G,J,K,Q,S,X,Z -> 2,
   D,T -> 3, L -> 4, M,N -> 5, R -> 6;
4. collapse runs of the same digit, where H and W are transparent
   (a digit repeated across H/W still collapses) and the vowels
   A,E,I,O,U,Y break a run; the first letter's own digit takes part in
   the collapsing;
5. truncate/zero-pad to one letter plus three digits.
"""

__all__ = ["soundex"]

_DIGIT = {}
for _letters, _d in (
    ("BFPV", "1"),
    ("CGJKQSXZ", "2"),
    ("DT", "3"),
    ("L", "4"),
    ("MN", "5"),
    ("R", "6"),
):
    for _ch in _letters:
        _DIGIT[_ch] = _d


def soundex(name: str) -> str:
    """Return the 4-character American Soundex code of a surname.

    Raises ValueError if nothing remains after stripping non-letters.
    """
    letters = [c for c in name.upper() if "A" <= c <= "Z"]
    if not letters:
        raise ValueError(f"cannot compute soundex of {name!r}: no ASCII letters")
    first = letters[0]
    prev = _DIGIT.get(first, "")
    digits = []
    for ch in letters[1:]:
        if ch in "HW":
            continue
        d = _DIGIT.get(ch)
        if d is None:
            prev = ""
            continue
        if d != prev:
            digits.append(d)
        prev = d
        if len(digits) >= 3:
            break
    return (first + "".join(digits[:3])).ljust(4, "0")
