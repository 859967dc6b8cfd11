#!/usr/bin/env python3
"""Reference interpolated modified Kneser-Ney, evaluated recursively in exact
rational arithmetic straight from the count definitions.

Writes kn_oracle_values.inc, which the C++ tests include. Rerun with
    python3 tests/oracle/kn_oracle.py > tests/oracle/kn_oracle_values.inc
"""
from collections import Counter, defaultdict
from fractions import Fraction
import math

BOS, EOS, UNK = "<s>", "</s>", "<unk>"


def vocabulary(sentences):
    counts = Counter(w for s in sentences for w in s.split())
    regular = sorted(counts, key=lambda w: (-counts[w], w))
    return [UNK, BOS, EOS] + regular


class KN:
    def __init__(self, sentences, order):
        self.order = order
        self.vocab = vocabulary(sentences)
        seqs = [[BOS] + s.split() + [EOS] for s in sentences]
        raw = [Counter() for _ in range(order + 1)]
        for seq in seqs:
            for i in range(1, len(seq)):
                for n in range(1, order + 1):
                    if i + 1 - n < 0:
                        break
                    raw[n][tuple(seq[i + 1 - n:i + 1])] += 1
        # Adjusted counts: raw at the top order and for BOS-initial grams,
        # otherwise the number of distinct words seen to the left.
        self.a = [Counter() for _ in range(order + 1)]
        for n in range(1, order + 1):
            for g, c in raw[n].items():
                if n == order or g[0] == BOS:
                    self.a[n][g] = c
                else:
                    self.a[n][g] = sum(1 for h in raw[n + 1] if h[1:] == g)
        self.D = [None]
        for n in range(1, order + 1):
            coc = Counter(v for v in self.a[n].values())
            n1, n2, n3, n4 = (coc[k] for k in (1, 2, 3, 4))
            fixed = (Fraction(3, 4),) * 3
            if n1 == 0 or n2 == 0 or n3 == 0:
                self.D.append(fixed)
                continue
            y = Fraction(n1, n1 + 2 * n2)
            d = (1 - 2 * y * Fraction(n2, n1), 2 - 3 * y * Fraction(n3, n2), 3 - 4 * y * Fraction(n4, n3))
            ok = all(0 < d[k] <= k + 1 for k in range(3))
            self.D.append(d if ok else fixed)

    def disc(self, n, c):
        if c == 0:
            return Fraction(0)
        return self.D[n][min(c, 3) - 1]

    def prob(self, ctx, w):
        ctx = tuple(ctx[len(ctx) - min(len(ctx), self.order - 1):])
        n = len(ctx) + 1
        if n == 1:
            total = sum(self.a[1].values())
            gamma = sum(self.disc(1, c) for c in self.a[1].values()) / total
            c = self.a[1].get((w,), 0)
            return (max(c - self.disc(1, c), 0)) / total + gamma / len(self.vocab)
        lower = self.prob(ctx[1:], w)
        followers = {g: c for g, c in self.a[n].items() if g[:-1] == ctx}
        if not followers:
            return lower
        total = sum(followers.values())
        gamma = sum(self.disc(n, c) for c in followers.values()) / total
        c = followers.get(ctx + (w,), 0)
        return (c - self.disc(n, c)) / total + gamma * lower

    def log10_sentence(self, sentence):
        words = [w if w in self.vocab else UNK for w in sentence.split()] + [EOS]
        hist = [BOS]
        total = 0.0
        for w in words:
            total += math.log10(self.prob(hist, w))
            hist.append(w)
        return total, len(words)


def cstr(tokens):
    return "{" + ", ".join('"%s"' % t for t in tokens) + "}"


def emit_table(name, model, queries):
    print("// %s: {context, word, P(word | context)}" % name)
    print("inline const std::vector<OracleQuery> %s = {" % name)
    for ctx, w in queries:
        print('    {%s, "%s", %s},' % (cstr(ctx), w, repr(float(model.prob(ctx, w)))))
    print("};")


def emit_ppl(name, model, sentences):
    print("inline const std::vector<OraclePerplexity> %s = {" % name)
    for s in sentences:
        lp, n = model.log10_sentence(s)
        print('    {"%s", %s, %d},' % (s, repr(10 ** (-lp / n)), n))
    print("};")


def main():
    print("// Generated by tests/oracle/kn_oracle.py. Do not edit.")
    toy = ["a b", "a c"]
    bigram = KN(toy, 2)
    qs = [((), w) for w in bigram.vocab]
    qs += [((c,), w) for c in bigram.vocab for w in bigram.vocab]
    print("inline const std::vector<std::string> kToySentences = %s;" % cstr(toy))
    emit_table("kToyBigram", bigram, qs)
    emit_ppl("kToyBigramPerplexity", bigram, ["a b", "a c", "b a", "a z"])

    once = ["a b c d"]
    unigram = KN(once, 1)
    print("inline const std::vector<std::string> kUnigramSentences = %s;" % cstr(once))
    emit_table("kUnigram", unigram, [((), w) for w in unigram.vocab])

    five = [
        "the cat sat on the mat",
        "the dog sat on the log",
        "a cat saw the dog",
        "the cat sat on the log",
        "a dog saw a cat on the mat",
        "the mat was on the log",
    ]
    m5 = KN(five, 5)
    queries = [
        (("<s>", "the", "cat", "sat"), "on"),
        (("the", "cat", "sat", "on"), "the"),
        (("dog", "saw", "a", "cat"), "on"),
        (("cat", "sat", "on", "a"), "mat"),      # unseen 4-gram context
        (("mat", "mat", "dog", "the"), "log"),   # unseen context, seen unigram context
        (("log", "log", "log", "log"), "cat"),
        (("saw", "the", "log", "on"), "</s>"),
        (("the",), "<unk>"),
        (("<s>",), "a"),
        ((), "the"),
        (("x", "y", "the", "dog"), "sat"),
        (("on", "the", "mat", "was"), "on"),
    ]
    queries = [(tuple(w if w in m5.vocab else UNK for w in c), w) for c, w in queries]
    print("inline const std::vector<std::string> kFiveGramSentences = %s;" % cstr(five))
    emit_table("kFiveGram", m5, queries)
    emit_ppl("kFiveGramPerplexity", m5, five + ["the dog sat on the mat", "a log saw the cat", "zebra on the mat"])


if __name__ == "__main__":
    main()
