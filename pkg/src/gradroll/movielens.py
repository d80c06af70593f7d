"""MovieLens 100k conversion to triple files.

Ratings become triples `u<user>  rating_<r>  m<item>`: entities are the
union of users and movies, relations are the five rating levels. The split
follows the per-user protocol files: `ua.base` becomes the training split,
the first 5000 lines of `ua.test` the validation split, and the remainder
the test split.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError, ParseError

VALID_SIZE = 5000


def _convert_lines(path: Path) -> list[str]:
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ParseError(path, line_no,
                                 f"expected 4 tab-separated fields, got {len(fields)}")
            user, item, rating, _timestamp = fields
            if not (user.isdigit() and item.isdigit() and rating.isdigit()):
                raise ParseError(path, line_no, "non-numeric user/item/rating")
            rows.append(f"u{user}\trating_{rating}\tm{item}\n")
    return rows


def convert_movielens(ml_dir, out_dir) -> dict:
    """Convert `ua.base`/`ua.test` under `ml_dir` into train/valid/test TSVs."""
    ml_dir = Path(ml_dir)
    base = ml_dir / "ua.base"
    test = ml_dir / "ua.test"
    if not base.exists():
        raise ConfigError(f"{base}: not found (expected MovieLens 100k layout)")
    if not test.exists():
        raise ConfigError(f"{test}: not found (expected MovieLens 100k layout)")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_rows = _convert_lines(base)
    heldout_rows = _convert_lines(test)
    valid_rows = heldout_rows[:VALID_SIZE]
    test_rows = heldout_rows[VALID_SIZE:]

    (out_dir / "train.txt").write_text("".join(train_rows), encoding="utf-8")
    (out_dir / "valid.txt").write_text("".join(valid_rows), encoding="utf-8")
    (out_dir / "test.txt").write_text("".join(test_rows), encoding="utf-8")
    return {
        "train": len(train_rows),
        "valid": len(valid_rows),
        "test": len(test_rows),
        "out_dir": str(out_dir),
    }
