"""Brute-force count of (S, L) pairs with S * L >= mp0 * 900.

Independent of the package: plain integer loops and exact fractions.
Usage: python3 scripts/count_eligible_pairs.py [mp0]   (default 0.43)
"""

import sys
from fractions import Fraction


def count_eligible(mp0="0.43"):
    cut = Fraction(mp0) * 900
    count = total = 0
    for s in range(2, 31):
        for l in range(2, 31):
            total += 1
            if s * l >= cut:
                count += 1
    return count, total


if __name__ == "__main__":
    mp0 = sys.argv[1] if len(sys.argv) > 1 else "0.43"
    count, total = count_eligible(mp0)
    print(f"mp0={mp0} cut={Fraction(mp0) * 900} eligible={count} total={total} "
          f"fraction={count / total!r}")
