import pytest

from gradroll.errors import ConfigError, ParseError
from gradroll.movielens import convert_movielens
from gradroll.triples import load_triples


def make_ml_dir(tmp_path, n_base=20, n_test=8):
    ml = tmp_path / "ml-100k"
    ml.mkdir()
    base_lines = [f"{u}\t{i}\t{(u + i) % 5 + 1}\t88125094{u}\n"
                  for u in range(1, 6) for i in range(1, n_base // 5 + 1)]
    test_lines = [f"{u}\t{i + 50}\t{(u * i) % 5 + 1}\t88125095{u}\n"
                  for u in range(1, 5) for i in range(1, n_test // 4 + 1)]
    (ml / "ua.base").write_text("".join(base_lines))
    (ml / "ua.test").write_text("".join(test_lines))
    return ml


def test_line_mapping(tmp_path):
    ml = tmp_path / "ml-100k"
    ml.mkdir()
    (ml / "ua.base").write_text("1\t5\t3\t881250949\n")
    (ml / "ua.test").write_text("2\t9\t5\t881250950\n")
    out = tmp_path / "out"
    convert_movielens(ml, out)
    assert (out / "train.txt").read_text() == "u1\trating_3\tm5\n"
    # fewer than 5000 held-out lines: they all land in the valid split
    assert (out / "valid.txt").read_text() == "u2\trating_5\tm9\n"
    assert (out / "test.txt").read_text() == ""


def test_split_sizes_and_vocab(tmp_path):
    ml = make_ml_dir(tmp_path)
    out = tmp_path / "out"
    result = convert_movielens(ml, out)
    assert result["train"] == 20
    assert result["valid"] == 8
    assert result["test"] == 0

    store, vocab = load_triples(out / "train.txt")
    assert len(store) == 20
    assert all(n.startswith(("u", "m")) for n in vocab.entities)
    assert all(n.startswith("rating_") for n in vocab.relations)
    assert vocab.n_relations <= 5


def test_valid_split_caps_at_5000(tmp_path):
    ml = tmp_path / "ml"
    ml.mkdir()
    (ml / "ua.base").write_text("1\t1\t5\t0\n")
    (ml / "ua.test").write_text(
        "".join(f"1\t{i}\t5\t0\n" for i in range(1, 5503)))
    result = convert_movielens(ml, tmp_path / "out")
    assert result["valid"] == 5000
    assert result["test"] == 502


def test_malformed_line_reports_number(tmp_path):
    ml = tmp_path / "ml"
    ml.mkdir()
    (ml / "ua.base").write_text("1\t5\t3\t0\n1\t5\t3\n")
    (ml / "ua.test").write_text("")
    with pytest.raises(ParseError) as exc:
        convert_movielens(ml, tmp_path / "out")
    assert exc.value.line_no == 2


def test_missing_files_config_error(tmp_path):
    with pytest.raises(ConfigError):
        convert_movielens(tmp_path, tmp_path / "out")
