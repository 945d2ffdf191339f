#!/usr/bin/env python3
"""Regenerates the bundled TSV resources from upstream open-source packages.

  t2s.tsv       traditional -> simplified codepoints (hanziconv, Apache-2.0)
  emoji.tsv     emoji sequence -> colon-delimited name (emoji, BSD)
  zh_dict.tsv   word -> frequency for the fallback segmenter (jieba, MIT)

Usage: gen_resources.py <hanziconv charmap.py> <emoji.json> <jieba dict.txt> <out dir>
"""
import json
import os
import sys


def load_charmap(path):
    ns = {}
    exec(compile(open(path, encoding="utf-8").read(), path, "exec"), ns)
    return ns["traditional_charmap"], ns["simplified_charmap"]


def main():
    charmap, emoji_json, jieba_dict, out = sys.argv[1:5]
    trad, simp = load_charmap(charmap)
    mapping = {}
    for t, s in zip(trad, simp):
        if t == s or t in mapping or t in simp:
            continue
        mapping[t] = s
    with open(os.path.join(out, "t2s.tsv"), "w", encoding="utf-8") as f:
        for t in sorted(mapping):
            f.write(f"{t}\t{mapping[t]}\n")

    table = json.load(open(emoji_json, encoding="utf-8"))
    with open(os.path.join(out, "emoji.tsv"), "w", encoding="utf-8") as f:
        for seq in sorted(table):
            entry = table[seq]
            if entry.get("status", 2) > 2:
                continue
            name = entry["en"].lower()
            if "\t" in name or " " in name:
                continue
            f.write(f"{seq}\t{name}\n")

    words = []
    for line in open(jieba_dict, encoding="utf-8"):
        parts = line.split()
        if len(parts) >= 2 and parts[1].isdigit():
            words.append((int(parts[1]), parts[0]))
    words.sort(key=lambda p: (-p[0], p[1]))
    with open(os.path.join(out, "zh_dict.tsv"), "w", encoding="utf-8") as f:
        for freq, w in words[:60000]:
            f.write(f"{w}\t{freq}\n")


if __name__ == "__main__":
    main()
