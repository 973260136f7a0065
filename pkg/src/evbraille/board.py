"""Grade 1 Braille alphabet and parametric board layouts."""

from __future__ import annotations

import json
import random
import string
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

LETTERS = string.ascii_uppercase

# dots 1-3: left column top to bottom, dots 4-6: right column top to bottom
_ALPHABET = {
    "A": {1}, "B": {1, 2}, "C": {1, 4}, "D": {1, 4, 5}, "E": {1, 5},
    "F": {1, 2, 4}, "G": {1, 2, 4, 5}, "H": {1, 2, 5}, "I": {2, 4}, "J": {2, 4, 5},
    "K": {1, 3}, "L": {1, 2, 3}, "M": {1, 3, 4}, "N": {1, 3, 4, 5}, "O": {1, 3, 5},
    "P": {1, 2, 3, 4}, "Q": {1, 2, 3, 4, 5}, "R": {1, 2, 3, 5}, "S": {2, 3, 4},
    "T": {2, 3, 4, 5}, "U": {1, 3, 6}, "V": {1, 2, 3, 6}, "W": {2, 4, 5, 6},
    "X": {1, 3, 4, 6}, "Y": {1, 3, 4, 5, 6}, "Z": {1, 3, 5, 6},
}

RAB_SEED = 1729
# presets use a tighter pitch than the BoardLayout default; see README
PRESET_PITCH = 6.0


class BoardFormatError(ValueError):
    """A board file violates the schema."""


@dataclass(frozen=True)
class DotPattern:
    dots: frozenset

    def __post_init__(self):
        dots = frozenset(int(d) for d in self.dots)
        if not dots <= set(range(1, 7)):
            raise ValueError(f"dots must be a subset of 1..6, got {sorted(dots)}")
        object.__setattr__(self, "dots", dots)

    def __len__(self):
        return len(self.dots)

    def columns(self) -> tuple[list[int], list[int]]:
        """Row indices (0..2) of raised dots in the left and right columns."""
        left = sorted(d - 1 for d in self.dots if d <= 3)
        right = sorted(d - 4 for d in self.dots if d >= 4)
        return left, right


def encode_char(letter: str) -> DotPattern:
    if not isinstance(letter, str) or len(letter) != 1 or letter.upper() not in _ALPHABET:
        raise ValueError(f"not a letter A-Z: {letter!r}")
    return DotPattern(frozenset(_ALPHABET[letter.upper()]))


def is_single_column(pattern: DotPattern) -> bool:
    return pattern.dots <= {1, 2, 3}


SINGLE_COLUMN = frozenset(c for c in LETTERS if is_single_column(encode_char(c)))


@dataclass(frozen=True)
class BoardLayout:
    """A board of Braille rows; a space in a row string is a word gap.

    Each space occupies ``word_gap_cells`` blank cells.  Geometry is in mm.
    """

    name: str
    rows: tuple[str, ...]
    dot_diameter: float = 0.5
    dot_spacing: float = 2.5
    cell_pitch: float = 7.5
    row_length: float = 195.0
    word_gap_cells: int = 1

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        for i, row in enumerate(self.rows):
            bad = [ch for ch in row if ch != " " and ch not in LETTERS]
            if bad:
                raise ValueError(f"row {i}: characters outside A-Z/space: {''.join(sorted(set(bad)))!r}")
        for fname in ("dot_diameter", "dot_spacing", "cell_pitch", "row_length"):
            if not getattr(self, fname) > 0:
                raise ValueError(f"{fname} must be positive")
        if self.word_gap_cells < 1:
            raise ValueError("word_gap_cells must be >= 1")
        for i in range(len(self.rows)):
            if self.row_extent(i) > self.row_length + 1e-9:
                raise ValueError(
                    f"row {i} spans {self.row_extent(i):.1f} mm, longer than row_length {self.row_length} mm"
                )

    def slot(self, row: int, char_index: int) -> int:
        """Cell slot of a character, counting each word gap as ``word_gap_cells``."""
        text = self.rows[row]
        spaces = text[:char_index].count(" ")
        return char_index - spaces + spaces * self.word_gap_cells

    def row_extent(self, row: int) -> float:
        text = self.rows[row].rstrip()
        if not text:
            return 0.0
        return self.slot(row, len(text) - 1) * self.cell_pitch + self.dot_spacing + self.dot_diameter

    def characters(self, row: int) -> list[tuple[int, str]]:
        """(char_index, letter) for every non-space character of a row."""
        return [(i, ch) for i, ch in enumerate(self.rows[row]) if ch != " "]

    def words(self, row: int) -> list[str]:
        return self.rows[row].split()


def dot_positions(board: BoardLayout, row: int, char_index: int) -> list[tuple[float, float]]:
    """Centres (x, y) in mm of the raised dots of one character.

    x grows along the row from the character origin ``slot * cell_pitch``; y
    grows downward from the top dot row.
    """
    if not 0 <= row < len(board.rows):
        raise IndexError(f"row {row} out of range")
    text = board.rows[row]
    if not 0 <= char_index < len(text):
        raise IndexError(f"char_index {char_index} out of range for row {row}")
    ch = text[char_index]
    if ch == " ":
        return []
    x0 = board.slot(row, char_index) * board.cell_pitch
    out = []
    for d in sorted(encode_char(ch).dots):
        col, r = divmod(d - 1, 3)
        out.append((x0 + col * board.dot_spacing, r * board.dot_spacing))
    return out


def _daily_living_rows() -> tuple[str, ...]:
    text = resources.files("evbraille.data").joinpath("daily_living.txt").read_text()
    rows = [ln.strip().upper() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    return tuple(rows)


def preset_board(name: str, un_word: str = "WORD") -> BoardLayout:
    """Built-in boards: SAB, UN, RAB (training/test alphabet boards) and EV (words)."""
    key = name.upper()
    if key == "SAB":
        return BoardLayout("SAB", ("ABCDEFGHI", "JKLMNOPQR", "STUVWXYZ"), cell_pitch=PRESET_PITCH)
    if key == "RAB":
        order = list(LETTERS)
        random.Random(RAB_SEED).shuffle(order)
        s = "".join(order)
        return BoardLayout("RAB", (s[:9], s[9:18], s[18:]), cell_pitch=PRESET_PITCH)
    if key == "UN":
        return BoardLayout("UN", ("UNIVERSITY", "OF", un_word.upper()), cell_pitch=PRESET_PITCH)
    if key == "EV":
        # word gaps wide enough that a 1 s pause separates words even at 32 mm/s
        return BoardLayout("EV", _daily_living_rows(), cell_pitch=PRESET_PITCH, word_gap_cells=5, row_length=240.0)
    raise ValueError(f"unknown preset board {name!r} (expected SAB, UN, RAB or EV)")


# --- board files --------------------------------------------------------------

_FILE_FIELDS = {
    "dot_diameter_mm": "dot_diameter",
    "dot_spacing_mm": "dot_spacing",
    "cell_pitch_mm": "cell_pitch",
    "row_length_mm": "row_length",
    "word_gap_cells": "word_gap_cells",
}


def board_to_dict(board: BoardLayout) -> dict:
    d = asdict(board)
    out = {"name": d["name"], "rows": list(d["rows"])}
    for key, attr in _FILE_FIELDS.items():
        out[key] = d[attr]
    return out


def save_board(board: BoardLayout, path: str | Path) -> None:
    Path(path).write_text(json.dumps(board_to_dict(board), indent=2) + "\n", encoding="utf-8")


def parse_board(text: str, source: str = "<board>") -> BoardLayout:
    """Parse board JSON; fields missing from the file take the BoardLayout defaults."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BoardFormatError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise BoardFormatError(f"{source}: top level must be an object")
    unknown = set(raw) - {"name", "rows", *_FILE_FIELDS}
    if unknown:
        raise BoardFormatError(f"{source}: unknown field(s) {sorted(unknown)}")
    if not isinstance(raw.get("name"), str):
        raise BoardFormatError(f"{source}: field 'name' must be a string")
    rows = raw.get("rows")
    if not isinstance(rows, list) or not all(isinstance(r, str) for r in rows):
        raise BoardFormatError(f"{source}: field 'rows' must be a list of strings")
    for i, r in enumerate(rows):
        bad = sorted({ch for ch in r if ch != " " and ch not in LETTERS})
        if bad:
            line = _line_of(text, r)
            raise BoardFormatError(f"{source}:{line}: field 'rows[{i}]' has invalid characters {bad}")
    kwargs = {}
    for key, attr in _FILE_FIELDS.items():
        if key in raw:
            v = raw[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise BoardFormatError(f"{source}: field '{key}' must be a number")
            kwargs[attr] = int(v) if attr == "word_gap_cells" else float(v)
    try:
        return BoardLayout(raw["name"], tuple(rows), **kwargs)
    except ValueError as exc:
        raise BoardFormatError(f"{source}: {exc}") from None


def _line_of(text: str, needle: str) -> int:
    for n, line in enumerate(text.splitlines(), start=1):
        if f'"{needle}"' in line:
            return n
    return 0


def load_board(path: str | Path) -> BoardLayout:
    return parse_board(Path(path).read_text(encoding="utf-8"), str(path))


def resolve_board(spec: str, un_word: str = "WORD") -> BoardLayout:
    """A preset name or a path to a board file."""
    if spec.upper() in ("SAB", "UN", "RAB", "EV"):
        return preset_board(spec, un_word)
    return load_board(spec)
