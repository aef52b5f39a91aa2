"""
Unit tests for helper functions
Tests the utility functions in utils/helpers.py
"""

import os

import numpy as np
import pytest

from errors import UsageError
from utils.helpers import (
    create_csv_content,
    create_progress_bar,
    format_float,
    format_table,
    read_csv_rows,
    require_file,
    safe_str,
    write_bytes_atomic,
    write_text_atomic,
)


class TestFormattingFunctions:
    """Test formatting utility functions"""

    def test_format_float(self):
        """Test metric value formatting"""
        assert format_float(3) == "3"
        assert format_float(np.int64(7)) == "7"
        assert format_float(True) == "1"
        assert format_float(None) == ""
        assert format_float(0.1234567891234) == "0.12345679"
        assert format_float(2.0) == "2"
        assert format_float(np.float32(0.5), 3) == "0.5"

    def test_format_table(self):
        """Test aligned table rendering"""
        table = format_table(["model", "params"], [["student", 637039], ["teacher", 2416335]])
        lines = table.split("\n")
        assert lines[0].split() == ["model", "params"]
        assert set(lines[1].replace(" ", "")) == {"-"}
        assert lines[2].split() == ["student", "637039"]
        assert len(lines) == 4

    @pytest.mark.parametrize(
        "current,total,filled,label",
        [(5, 10, 5, "50.0%"), (10, 10, 10, "100.0%"), (0, 10, 0, "0.0%"), (0, 0, 0, "0.0%"), (12, 10, 10, "100.0%")],
    )
    def test_create_progress_bar(self, current, total, filled, label):
        """Success bars clamp to [0, total] and never divide by zero"""
        result = create_progress_bar(current, total, 10)
        assert result.count("█") == filled
        assert result.count("░") == 10 - filled
        assert result.endswith(label)


class TestSafeConversionFunctions:
    """Test safe conversion utility functions"""

    def test_safe_str(self):
        """Test safe string conversion"""
        assert safe_str(123) == "123"
        assert safe_str(None, "default") == "default"
        assert safe_str("text") == "text"


class TestCsvFunctions:
    """Test CSV writing and reading"""

    def test_csv_content(self):
        """Header line, one line per row, floats shortened"""
        content = create_csv_content(["epoch", "loss"], [[1, 0.25], [2, 0.125]])
        assert content == "epoch,loss\n1,0.25\n2,0.125\n"

    def test_csv_quoting(self):
        """Commas and quotes inside values are escaped"""
        content = create_csv_content(["name"], [['a,"b"']])
        assert content.split("\n")[1] == '"a,""b"""'

    def test_read_back(self, tmp_path):
        """Rows come back as header-keyed dicts"""
        path = str(tmp_path / "metrics.csv")
        write_text_atomic(path, create_csv_content(["epoch", "map50"], [[1, 0.5], [2, 0.75]]))
        rows = read_csv_rows(path)
        assert rows == [{"epoch": "1", "map50": "0.5"}, {"epoch": "2", "map50": "0.75"}]

    def test_read_empty(self, tmp_path):
        """An empty file has no rows"""
        path = tmp_path / "empty.csv"
        path.write_text("")
        assert read_csv_rows(str(path)) == []


class TestFileFunctions:
    """Test atomic writes and file checks"""

    def test_atomic_write_creates_directories(self, tmp_path):
        """Parent directories are created and no temp files remain"""
        path = str(tmp_path / "a" / "b" / "out.bin")
        write_bytes_atomic(path, b"\x00\x01")
        with open(path, "rb") as fh:
            assert fh.read() == b"\x00\x01"
        assert os.listdir(tmp_path / "a" / "b") == ["out.bin"]

    def test_atomic_write_replaces(self, tmp_path):
        """Existing files are replaced whole"""
        path = str(tmp_path / "out.txt")
        write_text_atomic(path, "first version")
        write_text_atomic(path, "second")
        with open(path, encoding="utf-8") as fh:
            assert fh.read() == "second"

    def test_require_file(self, tmp_path):
        """Missing inputs are usage errors naming what is missing"""
        path = tmp_path / "teacher.ckpt"
        path.write_bytes(b"")
        assert require_file(str(path), "teacher checkpoint") == str(path)
        with pytest.raises(UsageError, match="teacher checkpoint not found"):
            require_file(str(tmp_path / "missing.ckpt"), "teacher checkpoint")
        with pytest.raises(UsageError):
            require_file(None, "dataset")
