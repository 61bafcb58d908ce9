"""Independent reference implementations used only by the tests.

Each one is deliberately naive (enumeration, exact fractions, textbook
formulas) and shares no code with the package.
"""

import itertools
import math
from fractions import Fraction


def ngram_list(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def clipped_matches(hyp, ref, n):
    """Count hypothesis n-grams matched against distinct reference occurrences."""
    ref_grams = ngram_list(ref, n)
    used = [False] * len(ref_grams)
    count = 0
    for g in ngram_list(hyp, n):
        for i, r in enumerate(ref_grams):
            if not used[i] and r == g:
                used[i] = True
                count += 1
                break
    return count


def bleu4(hyp, ref, smooth=True):
    if not hyp:
        return 0.0
    logs = []
    for n in range(1, 5):
        m = clipped_matches(hyp, ref, n)
        t = max(len(hyp) - n + 1, 0)
        if m == 0:
            if not smooth:
                return 0.0
            m, t = 1, t + 1
        logs.append(math.log(m / t))
    bp = 1.0 if len(hyp) > len(ref) else math.exp(1 - len(ref) / len(hyp))
    return 100 * bp * math.exp(sum(logs) / 4)


def lcs_bruteforce(a, b):
    """Longest common subsequence by enumerating subsequences of the shorter input."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for k in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), k):
            sub = [short[i] for i in idx]
            it = iter(long_)
            if all(any(x == y for y in it) for x in sub):
                return k
    return 0


def f1(overlap, n_hyp, n_ref):
    if overlap == 0:
        return 0.0
    p, r = Fraction(overlap, n_hyp), Fraction(overlap, n_ref)
    return float(100 * 2 * p * r / (p + r))


def pd_exact(baseline, final):
    b, f = Fraction(str(baseline)), Fraction(str(final))
    return float((b - f) / b * 100)


def t_stat(scores, mu0):
    n = len(scores)
    mean = Fraction(sum(Fraction(str(x)) for x in scores), n)
    ss = sum((Fraction(str(x)) - mean) ** 2 for x in scores)
    sd = math.sqrt(ss / (n - 1))
    return float(mean), sd, (float(mean) - mu0) / (sd / math.sqrt(n))


def bivariate_mi_bits(rho):
    return -0.5 * math.log2(1 - rho * rho)
