"""Reference implementations used only by the tests.

These share no code with the package beyond the config dataclass.
"""

import itertools
import math


def dp_levenshtein(a, b):
    prev = list(range(len(b) + 1))
    for i in range(1, len(a) + 1):
        cur = [i] + [0] * len(b)
        for j in range(1, len(b) + 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1]))
        prev = cur
    return prev[-1]


def _klass(c, config):
    if c == config.separator:
        return "sep"
    return "v" if c in config.vowels else "c"


def _sub_ok(x, y, config):
    if x == y:
        return False
    kx, ky = _klass(x, config), _klass(y, config)
    if "sep" in (kx, ky):
        return config.separator_editable
    return kx == ky


def constrained_distance(a, b, config):
    """Alignment DP with inadmissible ops priced at infinity."""
    sep = config.separator
    inf = math.inf
    dcost = [1 if (c != sep or config.separator_editable) else inf for c in a]
    ins_sep = config.separator_editable and config.separator_insertable
    icost = [1 if (c != sep or ins_sep) else inf for c in b]
    prev = [0.0] * (len(b) + 1)
    for j in range(1, len(b) + 1):
        prev[j] = prev[j - 1] + icost[j - 1]
    for i in range(1, len(a) + 1):
        cur = [prev[0] + dcost[i - 1]] + [0.0] * len(b)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                sub = prev[j - 1]
            elif _sub_ok(a[i - 1], b[j - 1], config):
                sub = prev[j - 1] + 1
            else:
                sub = inf
            cur[j] = min(sub, prev[j] + dcost[i - 1], cur[j - 1] + icost[j - 1])
        prev = cur
    return prev[-1]


def _empty_word(s, sep):
    return not s or any(not w for w in s.split(sep))


def brute_force_exact(phrase, d, config):
    """All strings of length |phrase|+-d over the alphabet at plain and
    constrained distance exactly d, with no empty words."""
    out = set()
    for length in range(max(1, len(phrase) - d), len(phrase) + d + 1):
        for tup in itertools.product(config.alphabet, repeat=length):
            s = "".join(tup)
            if _empty_word(s, config.separator) or dp_levenshtein(phrase, s) != d:
                continue
            if constrained_distance(phrase, s, config) == d:
                out.add(s)
    return out


def pairwise_auc(pos, neg):
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def finite_difference(loss_fn, params, eps=1e-4):
    """Central differences of ``loss_fn()`` for every entry of every array in ``params``."""
    grads = {}
    for name, arr in params.items():
        g = [0.0] * arr.size
        flat = arr.reshape(-1)
        for k in range(arr.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = loss_fn()
            flat[k] = orig - eps
            down = loss_fn()
            flat[k] = orig
            g[k] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    worst = 0.0
    for name, num in numeric.items():
        for a, n in zip(analytic[name].reshape(-1).tolist(), num):
            worst = max(worst, abs(a - n) / max(abs(a), abs(n), floor))
    return worst
