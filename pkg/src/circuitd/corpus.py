"""Deterministic synthetic news corpus: generation and replay.

The generator reproduces flow shapes (documents per hour, average bytes)
without any linguistic realism: bodies are seeded token streams, and each
document carries its oracle topic label in a '#TOPICS:' header line so
downstream flow accuracy is exactly checkable against the manifest.

Same seed, same corpus, byte for byte.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import random
import sys
import time
import urllib.request
from dataclasses import dataclass, field

from .errors import ApiError

_VOCAB = (
    "market share index group bank fund rate growth merger stake profit "
    "quarter revenue board capital sector trade export price offer bid "
    "deal analyst report outlook forecast europe asia america investor "
    "shares earnings billion million percent announced according sources"
).split()

_NAMES = "Paris London Berlin Tokyo Geneva Madrid Vienna Oslo Dublin Lisbon".split()


@dataclass(frozen=True)
class FlowProfile:
    docs_per_hour: float
    avg_doc_bytes: int
    duration_hours: float
    seed: int
    topic_distribution: dict = field(default_factory=lambda: {"eco": 1.0})

    def __post_init__(self):
        total = sum(self.topic_distribution.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"topic probabilities sum to {total}, expected 1.0")

    @property
    def n_docs(self) -> int:
        return round(self.docs_per_hour * self.duration_hours)


def _doc_body(rng: random.Random, topic: str, target_bytes: int) -> bytes:
    header = f"#TOPICS: {topic}\n"
    words: list[str] = []
    size = len(header)
    while size < target_bytes:
        word = rng.choice(_NAMES) if rng.random() < 0.08 else rng.choice(_VOCAB)
        words.append(word)
        size += len(word) + 1
    text = header + " ".join(words) + "\n"
    return text.encode("utf-8")


def generate(profile: FlowProfile, out_dir: str) -> list[dict]:
    """Write the corpus files plus manifest.jsonl and profile.json; returns the manifest."""
    docs_dir = os.path.join(out_dir, "docs")
    os.makedirs(docs_dir, exist_ok=True)
    rng = random.Random(profile.seed)
    tags = sorted(profile.topic_distribution)
    weights = [profile.topic_distribution[t] for t in tags]

    manifest = []
    for i in range(profile.n_docs):
        topic = rng.choices(tags, weights=weights)[0]
        target = max(64, round(profile.avg_doc_bytes * rng.uniform(0.85, 1.15)))
        body = _doc_body(rng, topic, target)
        doc = f"doc-{profile.seed}-{i:06d}"
        path = os.path.join(docs_dir, f"{doc}.txt")
        with open(path, "wb") as f:
            f.write(body)
        manifest.append({"doc": doc, "path": path, "labels": [topic], "bytes": len(body)})

    with open(os.path.join(out_dir, "manifest.jsonl"), "w", encoding="utf-8") as f:
        for entry in manifest:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    with open(os.path.join(out_dir, "profile.json"), "w", encoding="utf-8") as f:
        json.dump({
            "docs_per_hour": profile.docs_per_hour,
            "avg_doc_bytes": profile.avg_doc_bytes,
            "duration_hours": profile.duration_hours,
            "seed": profile.seed,
            "topic_distribution": profile.topic_distribution,
        }, f, indent=2)
    return manifest


def load_manifest(corpus_dir: str) -> list[dict]:
    with open(os.path.join(corpus_dir, "manifest.jsonl"), encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def load_profile(corpus_dir: str) -> FlowProfile:
    with open(os.path.join(corpus_dir, "profile.json"), encoding="utf-8") as f:
        obj = json.load(f)
    return FlowProfile(
        docs_per_hour=obj["docs_per_hour"],
        avg_doc_bytes=obj["avg_doc_bytes"],
        duration_hours=obj["duration_hours"],
        seed=obj["seed"],
        topic_distribution=obj["topic_distribution"],
    )


@dataclass
class ReplayReport:
    ids: list = field(default_factory=list)  # (manifest doc, assigned id, ingest time)
    started_at: float = 0.0
    finished_at: float = 0.0


def replay(corpus_dir: str, target: str, root: str, speedup: float = math.inf) -> ReplayReport:
    """Ingest every corpus document through the HTTP API at scaled pacing.

    Documents are evenly spaced over the profile duration; speedup divides
    the inter-arrival gap (infinite speedup means no pacing at all).
    """
    manifest = load_manifest(corpus_dir)
    profile = load_profile(corpus_dir)
    interval = 0.0
    if manifest and math.isfinite(speedup) and speedup > 0:
        interval = (profile.duration_hours * 3600.0 / len(manifest)) / speedup

    report = ReplayReport(started_at=time.time())
    next_send = time.monotonic()
    for entry in manifest:
        if interval > 0:
            delay = next_send - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            next_send += interval
        with open(entry["path"], "rb") as f:
            payload = f.read()
        url = f"{target.rstrip('/')}/ingest?root={root}"
        try:
            with urllib.request.urlopen(
                urllib.request.Request(url, data=payload, method="POST"), timeout=30
            ) as resp:
                assigned = resp.read().decode("utf-8").strip()
        except OSError as e:
            raise ApiError(f"ingest of {entry['doc']} failed: {e}") from e
        report.ids.append((entry["doc"], assigned, time.time()))
    report.finished_at = time.time()
    return report


def _parse_topics(text: str) -> dict:
    dist = {}
    for part in text.split(","):
        tag, _, prob = part.partition(":")
        dist[tag.strip()] = float(prob)
    return dist


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="circuitd-corpus")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic labeled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--rate", type=float, default=55.0, help="documents per hour")
    p.add_argument("--avg-bytes", type=int, default=2048)
    p.add_argument("--hours", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--topics", default="eco:1.0", help="tag:prob,tag:prob (sums to 1)")

    p = sub.add_parser("replay", help="replay a corpus into a deployment")
    p.add_argument("--corpus", required=True)
    p.add_argument("--target", default="http://127.0.0.1:8765")
    p.add_argument("--ingest-root", default="root")
    p.add_argument("--speedup", type=float, default=math.inf,
                   help="divide inter-arrival gaps (default: no pacing)")

    args = parser.parse_args(argv)
    if args.command == "gen":
        profile = FlowProfile(
            docs_per_hour=args.rate,
            avg_doc_bytes=args.avg_bytes,
            duration_hours=args.hours,
            seed=args.seed,
            topic_distribution=_parse_topics(args.topics),
        )
        manifest = generate(profile, args.out)
        total = sum(e["bytes"] for e in manifest)
        print(f"generated {len(manifest)} docs, {total} bytes, at {args.out}")
        return 0
    report = replay(args.corpus, args.target, args.ingest_root, speedup=args.speedup)
    print(f"replayed {len(report.ids)} docs in {report.finished_at - report.started_at:.1f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
