#!/usr/bin/env python3
"""Builds data/ from the public-domain text of Moby Dick.

Source: the chapter JSON files of the npm package @stdlib/datasets-moby-dick
(`npm pack @stdlib/datasets-moby-dick`, then unpack). Punctuation is split
into separate whitespace-delimited tokens; one paragraph per line.

Chapters 1-125 form the training corpus. Calibration prompts are sentence
openings from the training chapters; evaluation prompts are sentence
openings from the held-out chapters 126-135 and the epilogue.

usage: prepare_corpus.py <unpacked-package-dir> <out-dir>
"""
import json
import re
import sys
from pathlib import Path

TOKEN = re.compile(r"[A-Za-z0-9]+(?:['’][A-Za-z]+)*|[^\sA-Za-z0-9]")
PROMPT_LEN = 8


def paragraphs(text):
    for para in text.split("\n"):
        toks = TOKEN.findall(para.replace("’", "'"))
        if toks:
            yield " ".join(toks)


def sentence_openings(paras):
    for p in paras:
        toks = p.split()
        start = 0
        for i, t in enumerate(toks + ["."]):
            if t in {".", "!", "?"}:
                sent = toks[start:i]
                if len(sent) > PROMPT_LEN + 4:
                    yield " ".join(sent[:PROMPT_LEN])
                start = i + 1


def main():
    src = Path(sys.argv[1]) / "data"
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)

    def chapter(name):
        return list(paragraphs(json.loads((src / f"{name}.json").read_text())["text"]))

    train = []
    for name in ["etymology", "extracts"] + [f"chapter_{i}" for i in range(1, 126)]:
        train += chapter(name)
    held = []
    for name in [f"chapter_{i}" for i in range(126, 136)] + ["epilogue"]:
        held += chapter(name)

    (out / "moby_dick_train.txt").write_text("\n".join(train) + "\n")
    calib = list(sentence_openings(train))
    calib = calib[:: max(1, len(calib) // 200)][:200]
    (out / "calibration_prompts.txt").write_text("\n".join(calib) + "\n")
    evals = list(sentence_openings(held))
    evals = evals[:: max(1, len(evals) // 40)][:40]
    (out / "eval_prompts.txt").write_text("\n".join(evals) + "\n")


if __name__ == "__main__":
    main()
