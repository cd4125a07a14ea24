"""Independent reference implementations used to check the library."""
import math


def brute_ranks(xs):
    """Average 1-based ranks by counting, O(n^2)."""
    out = []
    for x in xs:
        below = sum(1 for y in xs if y < x)
        equal = sum(1 for y in xs if y == x)
        out.append(below + (equal + 1) / 2)
    return out


def brute_spearman(x, y):
    rx, ry = brute_ranks(list(x)), brute_ranks(list(y))
    n = len(rx)
    mx, my = sum(rx) / n, sum(ry) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    sxx = sum((a - mx) ** 2 for a in rx)
    syy = sum((b - my) ** 2 for b in ry)
    return sxy / math.sqrt(sxx * syy)


def loop_ema(xs, period):
    k = 2 / (period + 1)
    out = [float(xs[0])]
    for x in xs[1:]:
        out.append(out[-1] + k * (x - out[-1]))
    return out


def loop_macd(xs):
    fast, slow = loop_ema(xs, 12), loop_ema(xs, 26)
    line = [a - b for a, b in zip(fast, slow)]
    signal = loop_ema(line, 9)
    return line, signal, [a - b for a, b in zip(line, signal)]
