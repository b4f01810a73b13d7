#!/usr/bin/env python3
"""Embed prompts with a pretrained CLIP text encoder.

Reads the JSON lines written by `fontclip prompts` and writes an embedding
cache usable as `{"type": "external", "cache_path": ...}`:

    {"font_id": str, "prompt": str, "vector": [float, ...]}

Vectors are the raw text features (no normalization), one per distinct prompt.
"""

import argparse
import json
import sys

import torch
from transformers import CLIPModel, CLIPTokenizer


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("prompts", help="input JSON lines from `fontclip prompts`")
    parser.add_argument("out", help="output cache (.jsonl)")
    parser.add_argument("--model", default="openai/clip-vit-base-patch32", help="model name or local directory")
    parser.add_argument("--batch", type=int, default=64)
    args = parser.parse_args()

    if not args.out.endswith(".jsonl"):
        parser.error("the cache file must end in .jsonl")

    rows = []
    seen = set()
    with open(args.prompts, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            if "prompt" not in row:
                sys.exit(f"{args.prompts}:{n}: missing prompt")
            if row["prompt"] in seen:
                continue
            seen.add(row["prompt"])
            rows.append(row)

    tokenizer = CLIPTokenizer.from_pretrained(args.model)
    model = CLIPModel.from_pretrained(args.model).eval()

    with open(args.out, "w", encoding="utf-8") as out, torch.no_grad():
        for start in range(0, len(rows), args.batch):
            chunk = rows[start : start + args.batch]
            tokens = tokenizer([r["prompt"] for r in chunk], padding=True, truncation=True, return_tensors="pt")
            features = model.get_text_features(**tokens)
            for row, vector in zip(chunk, features.tolist()):
                out.write(json.dumps({"font_id": row.get("font_id", ""), "prompt": row["prompt"], "vector": vector}) + "\n")
    print(f"embedded {len(rows)} prompts to {args.out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
