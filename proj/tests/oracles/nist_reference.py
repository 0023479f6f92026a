#!/usr/bin/env python3
"""Reference NIST scorer (Doddington 2002), matching the de-facto standard
implementation in NLTK's nltk.translate.nist_score / mteval-v13a.pl.

Used to freeze the expected values in test_metrics.cpp. Run:
    python3 nist_reference.py
"""
import math
from collections import Counter


def ngrams(seq, n):
    return [tuple(seq[i:i + n]) for i in range(len(seq) - n + 1)]


def nist_length_penalty(ref_len, hyp_len):
    ratio = hyp_len / ref_len
    if 0 < ratio < 1:
        ratio_x, score_x = 1.5, 0.5
        beta = math.log(score_x) / math.log(ratio_x) ** 2
        return math.exp(beta * math.log(ratio) ** 2)
    return max(min(ratio, 1.0), 0.0)


def corpus_nist(list_of_references, hypotheses, n=5):
    assert len(list_of_references) == len(hypotheses)
    ngram_freq = Counter()
    total_reference_words = 0
    for references in list_of_references:
        for reference in references:
            for i in range(1, n + 1):
                ngram_freq.update(ngrams(reference, i))
            total_reference_words += len(reference)

    information_weights = {}
    for _ngram in ngram_freq:
        _mgram = _ngram[:-1]
        if _mgram and _mgram in ngram_freq:
            numerator = ngram_freq[_mgram]
        else:
            numerator = total_reference_words
        information_weights[_ngram] = math.log(numerator / ngram_freq[_ngram], 2)

    nist_precision_numerator_per_ngram = Counter()
    nist_precision_denominator_per_ngram = Counter()
    l_ref, l_sys = 0, 0
    for i in range(1, n + 1):
        for references, hypothesis in zip(list_of_references, hypotheses):
            hyp_len = len(hypothesis)
            nist_score_per_ref = []
            for reference in references:
                _ref_len = len(reference)
                hyp_ngrams = Counter(ngrams(hypothesis, i)) if len(hypothesis) >= i else Counter()
                ref_ngrams = Counter(ngrams(reference, i)) if len(reference) >= i else Counter()
                ngram_overlaps = hyp_ngrams & ref_ngrams
                _numerator = sum(information_weights.get(_ngram, 0.0) * count
                                 for _ngram, count in ngram_overlaps.items())
                _denominator = sum(hyp_ngrams.values())
                _precision = 0 if _denominator == 0 else _numerator / _denominator
                nist_score_per_ref.append((_precision, _numerator, _denominator, _ref_len))
            precision, numerator, denominator, ref_len = max(nist_score_per_ref)
            nist_precision_numerator_per_ngram[i] += numerator
            nist_precision_denominator_per_ngram[i] += denominator
            l_ref += ref_len
            l_sys += hyp_len

    nist_precision = 0
    for i in nist_precision_numerator_per_ngram:
        num = nist_precision_numerator_per_ngram[i]
        den = nist_precision_denominator_per_ngram[i]
        if den > 0:
            nist_precision += num / den
    return nist_precision * nist_length_penalty(l_ref, l_sys)


VIGNETTE = [
    ("a small round fruit of the orchard",
     "a small round fruit of the orchard"),
    ("a large wild animal of the forest",
     "a large fierce animal of the woods"),
    ("the act of moving quickly on foot",
     "the act of running fast on foot"),
    ("a tool used for cutting wood",
     "a sharp tool for cutting wood or metal"),
    ("music played at night",
     "a piece of music performed in the evening"),
]


def main():
    hyps = [h.split() for h, _ in VIGNETTE]
    refs = [[r.split()] for _, r in VIGNETTE]
    print("corpus NIST (5 pairs): %.12f" % corpus_nist(refs, hyps))
    print("corpus NIST (first pair alone): %.12f" % corpus_nist(refs[:1], hyps[:1]))
    # single-pair scores under corpus-wide information weights are computed by
    # the C++ sentence variant; corpus scores above are the frozen oracle.
    for k in range(len(VIGNETTE)):
        print("pair %d alone: %.12f" % (k, corpus_nist(refs[k:k + 1], hyps[k:k + 1])))


if __name__ == "__main__":
    main()
