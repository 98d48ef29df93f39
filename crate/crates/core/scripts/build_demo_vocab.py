#!/usr/bin/env python3
"""Builds the bundled demo vocabulary and its test manifest.

The vocabulary stands in for a Chinese-heavy LLM tokenizer: 256 byte tokens,
English word pieces, whole-character tokens for common characters, two-byte
fragments for a band of rarer ones, multi-character Chinese tokens built from
corpus n-grams, a few mixed tokens, and the special markers.

The manifest records counts computed here, independently of the Rust code:
how many tokens are long and how many merges survive pruning.

Usage: python3 scripts/build_demo_vocab.py  (writes data/demo_vocab.json and
tests/fixtures/demo_vocab.manifest.json; output is deterministic)
"""

import collections
import json
import os
import re

HERE = os.path.dirname(os.path.abspath(__file__))
DATA = os.path.join(HERE, "..", "data")
FIXTURES = os.path.join(HERE, "..", "tests", "fixtures")

SPECIALS = ["[SOP]", "[EOP]", "[M]", "<|extra_1|>", "<|endoftext|>"]
N_CHARS = 2600
N_FRAGMENT_CHARS = 300
N_BIGRAMS = 3200
N_TRIGRAMS = 900
ENGLISH = """user assistant Fill in all the masks Output List characters following token
Write me a poem for my mother birthday farewell friend who is moving abroad about
first snow of winter spring rain moon night mountain sea river wind flower autumn
celebrate teacher father grandmother festival old new home city""".split()
PUNCT = list("，。、；？！：“”《》（）·")
MIXED = ["，我", "大X", "。我", "的a", "山1"]


def bytes_to_unicode():
    bs = list(range(ord("!"), ord("~") + 1)) + list(range(ord("¡"), ord("¬") + 1)) + list(range(ord("®"), ord("ÿ") + 1))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, map(chr, cs)))


BYTE_MAP = bytes_to_unicode()


def is_chinese(ch):
    cp = ord(ch)
    return 0x4E00 <= cp <= 0x9FFF or 0x3400 <= cp <= 0x4DBF


def is_long(token: bytes) -> bool:
    # A token is long if it holds two or more Chinese characters, or one
    # Chinese character plus anything else. All fixture tokens are valid
    # UTF-8 apart from byte tokens and fragments, which are never long.
    try:
        text = token.decode("utf-8")
    except UnicodeDecodeError:
        return False
    n = sum(1 for c in text if is_chinese(c))
    return n >= 2 or (n == 1 and len(text) > 1)


def load_text():
    parts = []
    with open(os.path.join(DATA, "poems.txt"), encoding="utf-8") as f:
        parts.append(f.read())
    with open(os.path.join(DATA, "forms.json"), encoding="utf-8") as f:
        for form in json.load(f):
            parts.append(form.get("example", ""))
            parts.append(form.get("zh_name", ""))
    for name in ("keywords.txt", "instructions.txt"):
        with open(os.path.join(DATA, name), encoding="utf-8") as f:
            parts.append(f.read())
    # Baseline prompt wording.
    parts.append("请写一首主题或要求为请严格按照对每一句话的字数要求下面给出一个例子请填写所有的掩码")
    return "\n".join(parts)


def main():
    text = load_text()
    tokens = []  # list of bytes, id = index
    index = {}
    merges = []

    def add(tok: bytes):
        if tok not in index:
            index[tok] = len(tokens)
            tokens.append(tok)
        return index[tok]

    def add_merge(left: bytes, right: bytes):
        add(left + right)
        merges.append((left, right))

    for b in range(256):
        add(bytes([b]))

    # English word pieces, with and without a leading space.
    seen_merges = set()
    for word in ENGLISH:
        for w in (word, " " + word):
            wb = w.encode()
            for k in range(2, len(wb) + 1):
                pair = (wb[: k - 1], wb[k - 1 : k])
                if pair not in seen_merges:
                    seen_merges.add(pair)
                    add_merge(*pair)

    for p in PUNCT:
        add(p.encode())
    add(b"\n\n")
    merges.append((b"\n", b"\n"))

    chars = collections.Counter(c for c in text if is_chinese(c))
    ranked = [c for c, _ in sorted(chars.items(), key=lambda kv: (-kv[1], kv[0]))]
    whole = ranked[:N_CHARS]
    fragment_only = ranked[N_CHARS : N_CHARS + N_FRAGMENT_CHARS]
    for c in whole:
        add(c.encode())
    # Rarer characters only get their two-byte prefix, reached by merges.
    for c in fragment_only:
        cb = c.encode()
        if (cb[:1], cb[1:2]) not in seen_merges:
            seen_merges.add((cb[:1], cb[1:2]))
            add_merge(cb[:1], cb[1:2])

    whole_set = set(whole)
    lines = [l for l in re.split(r"[^一-鿿㐀-䶿]+", text) if l]
    bigrams = collections.Counter()
    trigrams = collections.Counter()
    for l in lines:
        for i in range(len(l) - 1):
            if l[i] in whole_set and l[i + 1] in whole_set:
                bigrams[l[i : i + 2]] += 1
        for i in range(len(l) - 2):
            if all(c in whole_set for c in l[i : i + 3]):
                trigrams[l[i : i + 3]] += 1
    top_bi = [g for g, _ in sorted(bigrams.items(), key=lambda kv: (-kv[1], kv[0]))[:N_BIGRAMS]]
    bi_set = set(top_bi)
    for g in top_bi:
        add_merge(g[0].encode(), g[1].encode())
    tri = [g for g, _ in sorted(trigrams.items(), key=lambda kv: (-kv[1], kv[0])) if g[:2] in bi_set][:N_TRIGRAMS]
    for g in tri:
        add_merge(g[:2].encode(), g[2].encode())

    for m in MIXED:
        left, right = m[0].encode(), m[1:].encode()
        add(left)
        add(right)
        add_merge(left, right)

    for s in SPECIALS:
        add(s.encode())

    def show(tok: bytes) -> str:
        if tok in special_bytes:
            return tok.decode()
        return "".join(BYTE_MAP[b] for b in tok)

    special_bytes = {s.encode() for s in SPECIALS}
    vocab = {show(t): i for i, t in enumerate(tokens)}
    assert len(vocab) == len(tokens)
    out = {
        "vocab": vocab,
        "merges": [f"{show(l)} {show(r)}" for l, r in merges],
        "special_tokens": SPECIALS,
    }
    with open(os.path.join(DATA, "demo_vocab.json"), "w", encoding="utf-8") as f:
        json.dump(out, f, ensure_ascii=False, indent=0, sort_keys=True)
        f.write("\n")

    # Oracle: long tokens and surviving merges, computed from scratch.
    long_ids = [i for i, t in enumerate(tokens) if t not in special_bytes and is_long(t)]

    def base(t: bytes) -> bool:
        if len(t) == 1:
            return True
        try:
            return len(t.decode("utf-8")) == 1
        except UnicodeDecodeError:
            return False

    long_set = set(long_ids)
    avail = {i for i, t in enumerate(tokens) if t not in special_bytes and base(t)}
    cand = [(index[l], index[r], index[l + r]) for l, r in merges if index[l + r] not in long_set]
    keep = [False] * len(cand)
    changed = True
    while changed:
        changed = False
        for k, (l, r, res) in enumerate(cand):
            if not keep[k] and l in avail and r in avail:
                keep[k] = True
                avail.add(res)
                changed = True
    mixed_long = [m for m in MIXED if is_long(m.encode())]
    manifest = {
        "entries": len(tokens),
        "merges": len(merges),
        "long_tokens": len(long_ids),
        "long_tokens_pure_chinese": len(long_ids) - len(mixed_long),
        "surviving_merges": sum(keep),
        "whole_char_tokens": len(whole),
        "fragment_only_chars": fragment_only[:20],
        "specials": {s: index[s.encode()] for s in SPECIALS},
        "sample_long": [tokens[i].decode() for i in long_ids[:5]],
    }
    os.makedirs(FIXTURES, exist_ok=True)
    with open(os.path.join(FIXTURES, "demo_vocab.manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, ensure_ascii=False, indent=2)
        f.write("\n")
    print(json.dumps({k: v for k, v in manifest.items() if isinstance(v, int)}))


if __name__ == "__main__":
    main()
