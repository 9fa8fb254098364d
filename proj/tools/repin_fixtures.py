#!/usr/bin/env python3
"""Recompute fixture content hashes and rewrite kPinned in src/corpus.cpp.

Run from the repository root after editing any file under fixtures/.
"""

import pathlib
import re
import sys


def fnv1a64(data: bytes) -> str:
    h = 14695981039346656037
    for b in data:
        h = ((h ^ b) * 1099511628211) % (1 << 64)
    return f"{h:016x}"


def main() -> int:
    root = pathlib.Path(__file__).resolve().parent.parent
    corpus = root / "src" / "corpus.cpp"
    text = corpus.read_text()
    block = re.search(
        r"const std::vector<std::pair<std::string, std::string>> kPinned = \{(.*?)\};",
        text,
        re.S,
    )
    if not block:
        print("kPinned block not found", file=sys.stderr)
        return 1

    names = re.findall(r'\{"([a-z0-9_]+)",', block.group(1))
    lines = []
    for name in names:
        path = root / "fixtures" / f"{name}.pm"
        if not path.exists():
            print(f"missing fixture file {path}", file=sys.stderr)
            return 1
        lines.append(f'    {{"{name}", "{fnv1a64(path.read_bytes())}"}},')
    new_block = (
        "const std::vector<std::pair<std::string, std::string>> kPinned = {\n"
        + "\n".join(lines)
        + "\n};"
    )
    corpus.write_text(text[: block.start()] + new_block + text[block.end() :])
    print(f"pinned {len(names)} fixtures")
    return 0


if __name__ == "__main__":
    sys.exit(main())
