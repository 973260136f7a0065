"""Direct, slow re-implementations used as test oracles."""

from functools import lru_cache


def filter_reference(dets, min_consecutive=4, gap=70.0):
    n = len(dets)
    cuts = [0] + [i for i in range(1, n) if dets[i].t - dets[i - 1].t >= gap] + [n]
    out = []
    for a, b in zip(cuts, cuts[1:]):
        if b - a < min_consecutive:
            continue
        labels = sorted({d.char for d in dets[a:b]})
        stats = []
        for c in labels:
            confs = [d.confidence for d in dets[a:b] if d.char == c]
            stats.append((-len(confs), -sum(confs) / len(confs), c))
        out.append((sorted(stats)[0][2], dets[a].t))
    return out


def assemble_reference(reg, word_gap=1000.0):
    n = len(reg)
    cuts = [0] + [i for i in range(1, n) if reg[i][1] - reg[i - 1][1] > word_gap] + [n]
    return ["".join(c for c, _ in reg[a:b]) for a, b in zip(cuts, cuts[1:]) if b > a]


def metrics_reference(pred, truth):
    lines = words = same = exact = letters = good = 0
    for p, g in zip(pred, truth):
        pw, gw = p.split(), g.split()
        if len(pw) != len(gw):
            continue
        lines += 1
        for i in range(len(gw)):
            words += 1
            if len(pw[i]) != len(gw[i]):
                continue
            same += 1
            exact += pw[i] == gw[i]
            for j in range(len(gw[i])):
                letters += 1
                good += pw[i][j] == gw[i][j]
    div = lambda a, b: a / b if b else 0.0
    return (div(lines, len(truth)), div(same, words), div(exact, same), div(good, letters))


def edit_distance(a, b):
    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def spell_reference(word, words, k=2):
    if word in words:
        return word
    scored = sorted((edit_distance(word, w), w) for w in words)
    return scored[0][1] if scored and scored[0][0] <= k else word
