import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svmeuler import io as sio
from svmeuler.config import DEFAULT_TEXT, load_config, parse_config, parse_override, serialize
from svmeuler.errors import ConfigError, DataError
from svmeuler.lattice import FourierLattice, SpectralField

from oracles import random_field


class TestSnapshot:
    @pytest.mark.parametrize("dim, n", [(2, 1), (2, 7), (3, 3)])
    def test_round_trip_bit_identical(self, tmp_path, dim, n):
        u = random_field(dim, n, 3)
        path = tmp_path / "u.svmf"
        sio.write_snapshot(u, path, time=0.375)
        v, t = sio.read_snapshot(path)
        assert t == 0.375 and v.n == n and v.dim == dim
        assert v.coeffs.tobytes() == u.coeffs.tobytes()
        assert v.tag == "divergence_free"

    def test_layout(self):
        lat = FourierLattice(2, 1)
        u = SpectralField.from_modes(lat, {(-1, -1): [1 + 2j, 3 + 4j]})
        data = sio.encode_snapshot(u, 2.5)
        assert data[:4] == b"SVMF"
        assert struct.unpack_from("<III", data, 4) == (1, 2, 1)
        assert struct.unpack_from("<d", data, 16)[0] == 2.5
        # first k in lexicographic order is (-1, -1): u1 then u2, each (re, im)
        assert struct.unpack_from("<4d", data, 24) == (1.0, 2.0, 3.0, 4.0)
        assert len(data) == 24 + 9 * 2 * 16

    def test_wrong_magic(self):
        data = bytearray(sio.encode_snapshot(random_field(2, 2, 0)))
        data[:4] = b"XXXX"
        with pytest.raises(DataError, match="magic"):
            sio.decode_snapshot(bytes(data))

    def test_future_version(self):
        data = bytearray(sio.encode_snapshot(random_field(2, 2, 0)))
        struct.pack_into("<I", data, 4, 2)
        with pytest.raises(DataError, match="version 2"):
            sio.decode_snapshot(bytes(data))

    def test_truncated(self):
        data = sio.encode_snapshot(random_field(2, 2, 0))
        with pytest.raises(DataError):
            sio.decode_snapshot(data[:-1])
        with pytest.raises(DataError):
            sio.decode_snapshot(data[:10])

    def test_scalar_field_refused(self):
        with pytest.raises(DataError):
            sio.encode_snapshot(SpectralField.zeros(FourierLattice(2, 2), 1))


class TestCsv:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=20))
    def test_floats_round_trip_exactly(self, values):
        import tempfile, os
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "x.csv")
            sio.write_csv(path, ["v"], [[v] for v in values])
            header, rows = sio.read_csv(path)
        assert header == ["v"]
        assert [r[0] for r in rows] == values

    def test_mixed_cells(self, tmp_path):
        p = tmp_path / "m.csv"
        sio.write_csv(p, ["a", "b", "c"], [[1, np.float64(0.1), "x"], [np.int64(2), True, 1e-300]])
        assert p.read_text() == "a,b,c\n1,0.1,x\n2,true,1e-300\n"


class TestJson:
    def test_numpy_values(self):
        text = sio.dumps({"b": np.arange(2), "a": np.float64(0.5), "c": np.bool_(True)})
        assert json.loads(text) == {"a": 0.5, "b": [0, 1], "c": True}
        assert text.index('"a"') < text.index('"b"')


class TestCheckpointFiles:
    def test_round_trip(self, tmp_path):
        c = np.stack([random_field(2, 3, s).coeffs for s in range(3)])
        arrays = {"o0__rows": np.arange(6.0).reshape(2, 3)}
        sio.write_checkpoint(tmp_path, {"step": 4, "time": 0.04}, c, arrays)
        meta, c2, arr = sio.read_checkpoint(tmp_path)
        assert meta["step"] == 4 and meta["members"] == 3
        assert c2.tobytes() == c.tobytes()
        assert np.array_equal(arr["o0__rows"], arrays["o0__rows"])
        assert not (tmp_path / "checkpoint.json.tmp").exists()

    def test_stale_arrays_removed(self, tmp_path):
        c = random_field(2, 2, 0).coeffs[None]
        sio.write_checkpoint(tmp_path, {}, c, {"old": np.zeros(1)})
        sio.write_checkpoint(tmp_path, {}, c, {"new": np.ones(1)})
        assert set(sio.read_checkpoint(tmp_path)[2]) == {"new"}

    def test_missing(self, tmp_path):
        with pytest.raises(DataError):
            sio.read_checkpoint(tmp_path)


class TestConfig:
    def test_minimal_defaults(self):
        cfg = parse_config('{"lattice": {"dim": 2, "n": 16}}')
        sc = cfg.scheme_config()
        assert sc.viscosity == pytest.approx(1 / 16) and sc.threshold == 4
        assert cfg.noise_model().K == 8
        assert cfg.data["scheme"]["integrator"] == "euler_maruyama"

    def test_m_not_below_n(self):
        with pytest.raises(ConfigError) as exc:
            parse_config('{"lattice": {"dim": 2, "n": 8}, "scheme": {"m": 8}}')
        assert any("m=8" in p and "n=8" in p for p in exc.value.problems)

    def test_all_problems_reported(self):
        text = '{"lattice": {"dim": 2}, "scheme": {"dt": "fast", "typo": 1}, "extra": 0}'
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        msgs = " | ".join(exc.value.problems)
        for fragment in ("lattice.n", "scheme.dt", "scheme.typo", "'extra'"):
            assert fragment in msgs

    def test_cross_field(self):
        text = json.dumps({"lattice": {"dim": 2, "n": 8}, "noise": {"family": "linear", "K": 2, "alphas": [0.1]},
                           "ensemble": {"ladder": [16, 8]}, "initial": {"preset": "vortex"}})
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        assert len(exc.value.problems) == 3

    def test_invalid_json(self):
        with pytest.raises(ConfigError, match="JSON"):
            parse_config("{lattice: 2}")

    def test_round_trip(self):
        text = json.dumps({"lattice": {"dim": 3, "n": 6}, "scheme": {"eps_law": [0.5, 2], "dt": 0.02, "T": 0.5},
                           "noise": {"family": "saturated_linear", "K": 3}, "seed": 12,
                           "observers": {"probes": [[0.1, [1.0, 2.0, 3.0]]]}})
        cfg = parse_config(text)
        again = parse_config(serialize(cfg))
        assert again == cfg and again.run_hash() == cfg.run_hash()
        assert again.scheme_config() == cfg.scheme_config()

    def test_overrides(self):
        cfg = parse_config(DEFAULT_TEXT, ["scheme.dt=0.005", "noise.family=linear", ("seed", 3)])
        assert cfg.scheme_config().dt == 0.005 and cfg.noise_model().family == "linear" and cfg.seed == 3
        assert parse_override("initial.preset=shear") == ("initial.preset", "shear")
        with pytest.raises(ConfigError):
            parse_override("noequals")

    def test_output_does_not_change_hash(self, monkeypatch):
        a = parse_config(DEFAULT_TEXT, ["output=a"])
        b = parse_config(DEFAULT_TEXT, ["output=b"])
        assert a.run_hash() == b.run_hash()
        monkeypatch.setenv("SVMEULER_OUTPUT", "/tmp/elsewhere")
        monkeypatch.setenv("SVMEULER_THREADS", "3")
        assert a.output == "/tmp/elsewhere" and a.threads == 3

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "none.json")
        (tmp_path / "c.json").write_text('{"lattice": {"dim": 2, "n": 4}}')
        assert load_config(tmp_path / "c.json").scheme_config().n == 4
