"""Regenerates the metric golden files.

BLEU uses a hand-count implementation (add-one on orders 2..4) and is
cross-checked against NLTK where the two smoothing rules agree. GLEU comes
from NLTK and CIDEr-D from the coco-caption scorer.

Line format: hyp <TAB> ref1 | ref2 ... <TAB> expected
"""
import math
import random
from collections import Counter

from nltk.translate.bleu_score import SmoothingFunction, sentence_bleu
from nltk.translate.gleu_score import sentence_gleu
from pycocoevalcap.cider.cider_scorer import CiderScorer

WORDS = "a b c d e f g".split()


def ngrams(seq, n):
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def hand_bleu(hyp, refs):
    if not hyp:
        return 0.0
    logs = 0.0
    for n in range(1, 5):
        h = ngrams(hyp, n)
        m = sum(min(c, max(ngrams(r, n)[g] for r in refs)) for g, c in h.items())
        t = max(0, len(hyp) - n + 1)
        if n > 1:
            m, t = m + 1, t + 1
        if m == 0:
            return 0.0
        logs += math.log(m / t)
    r = min((abs(len(x) - len(hyp)), len(x)) for x in refs)[1]
    bp = 1.0 if len(hyp) >= r else math.exp(1 - r / len(hyp))
    return bp * math.exp(logs / 4)


def cases(rng, count):
    out = []
    for _ in range(count):
        refs = [[rng.choice(WORDS) for _ in range(rng.randint(1, 8))] for _ in range(rng.randint(1, 3))]
        base = rng.choice(refs)
        hyp = [w if rng.random() < 0.7 else rng.choice(WORDS) for w in base]
        hyp = hyp[: rng.randint(0, len(hyp) + 1)] + [rng.choice(WORDS) for _ in range(rng.randint(0, 2))]
        out.append((hyp, refs))
    return out


def write(path, rows):
    with open(path, "w") as f:
        for hyp, refs, v in rows:
            f.write("%s\t%s\t%.6f\n" % (" ".join(hyp), " | ".join(" ".join(r) for r in refs), v))


def main():
    rng = random.Random(7)
    fixed = [
        ("the cat sat".split(), ["the cat sat down".split()]),
        ("a".split(), ["a b".split()]),
        ("a b".split(), ["c d".split()]),
        ("the cat is on the mat".split(), ["the cat is on the mat".split()]),
        ("".split(), ["a b".split()]),
    ]
    data = fixed + cases(rng, 40)

    bleu = []
    for hyp, refs in data:
        v = hand_bleu(hyp, refs)
        if len(hyp) >= 4:
            ref = sentence_bleu(refs, hyp, smoothing_function=SmoothingFunction().method2)
            assert abs(ref - v) < 1e-12, (hyp, refs, v, ref)
        bleu.append((hyp, refs, v))
    write("bleu.txt", bleu)

    write("gleu.txt", [(h, r, sentence_gleu(r, h)) for h, r in data])

    scorer = CiderScorer(n=4, sigma=6.0)
    for hyp, refs in data:
        scorer += (" ".join(hyp), [" ".join(r) for r in refs])
    _, scores = scorer.compute_score()
    write("cider.txt", [(h, r, s) for (h, r), s in zip(data, scores)])


if __name__ == "__main__":
    main()
