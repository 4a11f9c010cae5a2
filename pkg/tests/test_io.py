import io
import math
import struct

import numpy as np
import pytest

from t2flow.diagnostics import CSV_COLUMNS, compute_record
from t2flow.fields import FIELD_NAMES, PeriodicGrid, UsageError
from t2flow.initial_data import SamplerSpec, make_initial_data
from t2flow.io import (
    CheckpointError,
    DiagnosticsWriter,
    RunManifest,
    checkpoint_bytes,
    checksum,
    format_value,
    read_checkpoint,
    read_config,
    read_csv,
    state_from_bytes,
    write_checkpoint,
    write_csv,
)

from conftest import random_state


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        for twist in (0, 1):
            s = random_state(rng, twist=twist, tau=float(rng.uniform(-5, 5)))
            path = tmp_path / f"s{twist}.t2f"
            digest = write_checkpoint(path, s)
            t = read_checkpoint(path)
            assert t.tau == s.tau and t.twist == s.twist
            for name in FIELD_NAMES:
                assert getattr(t, name).tobytes() == getattr(s, name).tobytes()
            assert checksum(path) == digest

    def test_layout(self, rng):
        s = random_state(rng, n=16)
        data = checkpoint_bytes(s)
        assert data[:4] == b"T2F1"
        version, n = struct.unpack_from("<II", data, 4)
        assert (version, n) == (1, 16)
        assert struct.unpack_from("<d", data, 12)[0] == s.tau
        assert data[20] == 1
        assert len(data) == 21 + 6 * 8 * 16
        v = np.frombuffer(data, dtype="<f8", count=16, offset=21)
        assert np.array_equal(v, s.v)
        pi_q = np.frombuffer(data, dtype="<f8", count=16, offset=21 + 5 * 8 * 16)
        assert np.array_equal(pi_q, s.pi_q)

    def test_corrupt(self, rng):
        data = bytearray(checkpoint_bytes(random_state(rng, n=16)))
        with pytest.raises(CheckpointError):
            state_from_bytes(bytes(data[:10]))
        with pytest.raises(CheckpointError):
            state_from_bytes(bytes(data[:-8]))
        bad = bytearray(data)
        bad[0:4] = b"XXXX"
        with pytest.raises(CheckpointError):
            state_from_bytes(bytes(bad))
        bad = bytearray(data)
        bad[4] = 9
        with pytest.raises(CheckpointError):
            state_from_bytes(bytes(bad))
        bad = bytearray(data)
        bad[20] = 3
        with pytest.raises(CheckpointError):
            state_from_bytes(bytes(bad))


class TestFormat:
    def test_round_trips_binary64(self, rng):
        for x in rng.normal(size=200) * 10.0 ** rng.integers(-300, 300, size=200):
            assert float(format_value(x)) == x

    def test_specials(self):
        assert format_value(math.nan) == "nan"
        assert format_value(math.inf) == "inf"
        assert format_value(-math.inf) == "-inf"

    def test_seventeen_digits(self):
        assert format_value(0.1) == "0.10000000000000001"


class TestCsv:
    def records(self, n=3):
        s = make_initial_data(SamplerSpec(mode="generic_random", seed=1, target_b=0.2), PeriodicGrid(64))
        return [compute_record(s.replace(tau=s.tau + 0.1 * k)) for k in range(n)]

    def test_header_and_round_trip(self, tmp_path):
        recs = self.records()
        path = tmp_path / "d.csv"
        write_csv(path, recs)
        lines = path.read_text().splitlines()
        assert lines[0].split(",") == [h for h, _ in CSV_COLUMNS]
        assert len(lines) == 1 + len(recs)
        data = read_csv(path)
        for header, attr in CSV_COLUMNS:
            assert np.array_equal(data[header], [getattr(r, attr) for r in recs])

    def test_abort_trailer(self):
        buf = io.StringIO()
        w = DiagnosticsWriter(buf)
        w.write(self.records(1)[0])
        w.abort(2.5)
        lines = buf.getvalue().splitlines()
        assert lines[-1] == "# aborted at tau=2.5"

    def test_read_skips_comments(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n1,2\n# aborted at tau=1\n")
        data = read_csv(path)
        assert list(data) == ["a", "b"] and data["b"][0] == 2.0

    def test_ragged_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n1,2,3\n")
        with pytest.raises(UsageError):
            read_csv(path)

    def test_empty_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("# nothing\n")
        with pytest.raises(UsageError):
            read_csv(path)


class TestManifest:
    def test_round_trip(self, tmp_path):
        spec = SamplerSpec(mode="generic_random", seed=3, target_b=0.1)
        m = RunManifest(spec=spec.as_dict(), grid_n=64, code_version="x", seed=3, initial_checksum="ab",
                        evolution={"cfl_lambda": 0.5}, tau_start=0.0, tau_end=2.0)
        path = tmp_path / "m.json"
        m.write(path)
        assert RunManifest.read(path) == m
        assert SamplerSpec(**RunManifest.read(path).spec) == spec

    def test_stable_text(self):
        m = RunManifest(spec={"b": 1, "a": 2}, grid_n=16, code_version="v", seed=0, initial_checksum="c")
        assert m.to_json() == RunManifest(spec={"a": 2, "b": 1}, grid_n=16, code_version="v", seed=0,
                                          initial_checksum="c").to_json()

    def test_bad_files(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("{not json")
        with pytest.raises(UsageError):
            RunManifest.read(path)
        path.write_text('{"unexpected": 1}')
        with pytest.raises(UsageError):
            RunManifest.read(path)


class TestConfig:
    def test_section_and_dashes(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[t2flow]\ntarget-b = 0.3\nseed=4\n")
        assert read_config(path) == {"target_b": "0.3", "seed": "4"}

    def test_sectionless(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("n = 128\n")
        assert read_config(path) == {"n": "128"}

    def test_missing_section(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[other]\nn = 1\n")
        with pytest.raises(UsageError):
            read_config(path)

    def test_unparsable(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[t2flow]\nno separator here\n")
        with pytest.raises(UsageError):
            read_config(path)
