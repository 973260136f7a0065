import json
import string
from itertools import combinations

import pytest

from evbraille.board import (
    SINGLE_COLUMN,
    BoardFormatError,
    BoardLayout,
    dot_positions,
    encode_char,
    is_single_column,
    load_board,
    parse_board,
    preset_board,
    resolve_board,
    save_board,
)


def test_encode_examples():
    assert encode_char("A").dots == {1}
    assert encode_char("E").dots == {1, 5}
    assert encode_char("E").dots - {5} == encode_char("A").dots
    assert encode_char("L").dots == {1, 2, 3}


def test_encode_rejects_non_letters():
    for bad in ("7", "", "AB", " "):
        with pytest.raises(ValueError):
            encode_char(bad)


def test_encoding_is_injective():
    pats = [encode_char(c).dots for c in string.ascii_uppercase]
    assert all(a != b for a, b in combinations(pats, 2))


def test_single_column_letters():
    assert is_single_column(encode_char("A"))
    assert not is_single_column(encode_char("E"))
    assert SINGLE_COLUMN == {"A", "B", "K", "L"}


def test_dot_positions_examples():
    b = BoardLayout("t", ("AC",))
    assert dot_positions(b, 0, 0) == [(0.0, 0.0)]
    assert BoardLayout("t", ("C",)).rows and dot_positions(BoardLayout("t", ("C",)), 0, 0) == [(0.0, 0.0), (2.5, 0.0)]
    assert dot_positions(b, 0, 1)[0][0] == 7.5


def test_dot_count_matches_pattern():
    b = BoardLayout("alpha", (string.ascii_uppercase[:13], string.ascii_uppercase[13:]), cell_pitch=7.5)
    for r in range(2):
        for i, ch in b.characters(r):
            assert len(dot_positions(b, r, i)) == len(encode_char(ch))


def test_dot_positions_bad_index():
    b = BoardLayout("t", ("A",))
    with pytest.raises(IndexError):
        dot_positions(b, 1, 0)


def test_presets():
    assert preset_board("SAB").rows[1] == "JKLMNOPQR"
    for name in ("SAB", "RAB"):
        assert sorted("".join(preset_board(name).rows)) == list(string.ascii_uppercase)
    assert preset_board("EV").words(0)[0] == "RIGHT"
    assert preset_board("UN").rows[2] == "WORD"
    assert preset_board("UN", un_word="abc").rows[2] == "ABC"
    with pytest.raises(ValueError):
        preset_board("XYZ")


def test_row_longer_than_board_rejected():
    with pytest.raises(ValueError):
        BoardLayout("long", ("A" * 40,), row_length=100.0)


def test_save_load_round_trip(tmp_path):
    b = preset_board("EV")
    p = tmp_path / "ev.json"
    save_board(b, p)
    assert load_board(p) == b
    assert resolve_board(str(p)) == b


def test_invalid_character_is_parse_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"name": "bad", "rows": ["AB7"]}))
    with pytest.raises(BoardFormatError, match="rows\\[0\\]"):
        load_board(p)


def test_missing_fields_take_defaults():
    b = parse_board(json.dumps({"name": "x", "rows": ["AB"]}))
    assert b.cell_pitch == 7.5 and b.dot_spacing == 2.5 and b.word_gap_cells == 1


def test_schema_errors():
    for text in ("[1]", "{", json.dumps({"name": "x", "rows": ["A"], "color": 1}),
                 json.dumps({"name": "x", "rows": ["A"], "cell_pitch_mm": "wide"})):
        with pytest.raises(BoardFormatError):
            parse_board(text)
