"""Regenerate src/phsbench/data/emoji_table.tsv from the `emoji` package.

Not a runtime dependency: the table is committed and versioned. Run with
``pip install emoji`` available:

    python tools/make_emoji_table.py
"""

from pathlib import Path

import emoji

OUT = Path(__file__).resolve().parents[1] / "src" / "phsbench" / "data" / "emoji_table.tsv"


def name_phrase(short_name: str) -> str:
    phrase = short_name.replace(":", " ").replace("_", " ")
    return " ".join(phrase.split()).lower()


def main() -> None:
    rows = []
    for seq, info in emoji.EMOJI_DATA.items():
        codepoints = " ".join(f"{ord(ch):04X}" for ch in seq)
        rows.append((codepoints, name_phrase(info["en"])))
    rows.sort()
    with OUT.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# phsbench emoji table v1 (source: emoji {emoji.__version__})\n")
        fh.write("# codepoints\tname phrase\n")
        for codepoints, phrase in rows:
            fh.write(f"{codepoints}\t{phrase}\n")
    print(f"wrote {len(rows)} rows to {OUT}")


if __name__ == "__main__":
    main()
