"""Stub document-processing components.

Standalone executables exercising the component contract in place of real
linguistic analyzers: deterministic, bitwise-repeatable functions of
their input files. The topic tagger reads oracle labels straight out of
the corpus header so end-to-end flow accuracy is exactly checkable.

Invocation: ``stub-<name> <in-path>... <out-path>``; exit 0 with the out
file written means success, anything else is a failed attempt. Also
runnable without installation: ``python -m circuitd.stubs <name> ...``.
"""

from __future__ import annotations

import os
import re
import sys

_WORD_RE = re.compile(r"\w+")
_ENTITY_RE = re.compile(r"^[A-Z][a-z]+$")


def _read_text(path: str) -> str:
    with open(path, "rb") as f:
        data = f.read()
    return data.decode("utf-8")  # UnicodeDecodeError -> exit 1 at the caller


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def tokenize(text: str) -> list[str]:
    """Whitespace-and-punctuation split: the word characters, in order."""
    return _WORD_RE.findall(text)


def topic_tags(text: str) -> str:
    """Comma-separated tags from a leading '#TOPICS: ...' line, or 'none'."""
    first = text.split("\n", 1)[0]
    if first.startswith("#TOPICS:"):
        tags = first[len("#TOPICS:"):].strip()
        if tags:
            return tags
    return "none"


def entities(tokens: list[str]) -> list[str]:
    return [t for t in tokens if _ENTITY_RE.match(t)]


def tokenizer_main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print("usage: stub-tokenizer <in> <out>", file=sys.stderr)
        return 2
    try:
        text = _read_text(argv[0])
    except UnicodeDecodeError as e:
        print(f"input is not UTF-8: {e}", file=sys.stderr)
        return 1
    toks = tokenize(text)
    _write(argv[1], "\n".join(toks) + ("\n" if toks else ""))
    return 0


def topic_tagger_main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print("usage: stub-topic-tagger <in> <out>", file=sys.stderr)
        return 2
    try:
        text = _read_text(argv[0])
    except UnicodeDecodeError as e:
        print(f"input is not UTF-8: {e}", file=sys.stderr)
        return 1
    _write(argv[1], topic_tags(text) + "\n")
    return 0


def ne_tagger_main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print("usage: stub-ne-tagger <in> <out>", file=sys.stderr)
        return 2
    try:
        text = _read_text(argv[0])
    except UnicodeDecodeError as e:
        print(f"input is not UTF-8: {e}", file=sys.stderr)
        return 1
    ents = entities([line for line in text.split("\n") if line])
    _write(argv[1], "\n".join(ents) + ("\n" if ents else ""))
    return 0


def poison_main(argv: list[str] | None = None) -> int:
    """Fail the first N-1 invocations per document, then succeed.

    ``stub-poison <N> <in> <out>`` where N may be 'inf'. With
    --only-marked the failure schedule applies only to inputs whose first
    line is '#POISON'; everything else succeeds immediately (lets one
    poisoned document flow among healthy ones through the same agent).
    Per-document invocation counters live in the working directory.
    """
    argv = sys.argv[1:] if argv is None else argv
    only_marked = "--only-marked" in argv
    argv = [a for a in argv if a != "--only-marked"]
    if len(argv) != 3:
        print("usage: stub-poison [--only-marked] <N> <in> <out>", file=sys.stderr)
        return 2
    n_raw, in_path, out_path = argv
    fail_until = float("inf") if n_raw == "inf" else int(n_raw)

    with open(in_path, "rb") as f:
        payload = f.read()

    scheduled = True
    if only_marked:
        scheduled = payload.startswith(b"#POISON")
    if scheduled:
        doc = os.environ.get("CIRCUIT_DOC") or os.path.basename(in_path)
        counter_path = f".poison.{doc}.count"
        try:
            with open(counter_path, encoding="ascii") as f:
                count = int(f.read().strip() or "0")
        except FileNotFoundError:
            count = 0
        count += 1
        with open(counter_path, "w", encoding="ascii") as f:
            f.write(f"{count}\n")
        if count < fail_until:
            print(f"poison: failing invocation {count} (succeeds at {n_raw})", file=sys.stderr)
            return 1

    with open(out_path, "wb") as f:
        f.write(payload)
    return 0


_MAINS = {
    "tokenizer": tokenizer_main,
    "topic-tagger": topic_tagger_main,
    "ne-tagger": ne_tagger_main,
    "poison": poison_main,
}


def main() -> int:
    if len(sys.argv) < 2 or sys.argv[1] not in _MAINS:
        print(f"usage: python -m circuitd.stubs {{{','.join(_MAINS)}}} ...", file=sys.stderr)
        return 2
    return _MAINS[sys.argv[1]](sys.argv[2:])


if __name__ == "__main__":
    sys.exit(main())
