import struct
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from attnlimit.io import CSV_COLUMNS, read_csv, read_samples, write_csv, write_json, write_samples
from attnlimit.plotting import emit_svg, plot_log_kl
from attnlimit.stats import SampleSet, kde


def test_awls_round_trip_and_header(tmp_path):
    vals = np.random.default_rng(0).standard_normal(37)
    path = write_samples(tmp_path / "x.awls", SampleSet.from_values(vals))
    raw = path.read_bytes()
    assert raw[:4] == b"AWLS"
    assert struct.unpack("<IQ", raw[4:16]) == (1, 37)
    assert len(raw) == 16 + 8 * 37
    assert np.array_equal(read_samples(path), vals)


def test_awls_rejects_corrupt_files(tmp_path):
    p = tmp_path / "bad.awls"
    p.write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(ValueError):
        read_samples(p)
    good = write_samples(tmp_path / "g.awls", np.ones(3))
    good.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_samples(good)


def test_csv_schema_and_exact_floats(tmp_path):
    row = dict(zip(CSV_COLUMNS, ["fig1", 16, 2, 0, 0.1 + 0.2, -2.3, 0.05, 1e-17, 0.8, -0.1, 2.5, 2**64 - 1]))
    path = write_csv(tmp_path / "r.csv", [row])
    assert path.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    back = read_csv(path)[0]
    assert float(back["kl"]) == 0.1 + 0.2
    assert int(back["seed"]) == 2**64 - 1


def test_json_is_deterministic(tmp_path):
    a = write_json(tmp_path / "a.json", {"b": np.float64(1.5), "a": [np.int64(2)], "c": float("-inf")})
    b = write_json(tmp_path / "b.json", {"c": float("-inf"), "a": [2], "b": 1.5})
    assert a.read_bytes() == b.read_bytes()


def _curves(n):
    rng = np.random.default_rng(1)
    out = [kde(rng.standard_normal(500) * (1 + k / 5), 256, label=f"n={4**k}") for k in range(n - 1)]
    return out + [kde(rng.standard_normal(500), 256, label="limit")]


def _paths(svg_path):
    ns = {"s": "http://www.w3.org/2000/svg"}
    return ET.parse(svg_path).getroot().findall(".//s:path", ns)


def test_emit_svg_overlay(tmp_path):
    path = emit_svg(_curves(5), tmp_path / "d.svg", title="densities")
    text = path.read_text()
    assert text.startswith("<?xml")
    for lab in ("n=1", "n=64", "limit"):
        assert lab in text
    assert "stroke-dasharray" in text  # dashed finite-width curves


def test_emit_svg_single_curve_and_empty(tmp_path):
    path = emit_svg(_curves(1), tmp_path / "one.svg")
    assert len(_paths(path)) >= 1
    with pytest.raises(ValueError):
        emit_svg([], tmp_path / "none.svg")


def test_svg_output_is_reproducible(tmp_path):
    a = emit_svg(_curves(3), tmp_path / "a.svg").read_bytes()
    b = emit_svg(_curves(3), tmp_path / "b.svg").read_bytes()
    assert a == b
    c = plot_log_kl([16, 64, 256], [-2.0, -3.5, -4.8], [0.2, 0.1, 0.3], tmp_path / "c.svg").read_bytes()
    d = plot_log_kl([16, 64, 256], [-2.0, -3.5, -4.8], [0.2, 0.1, 0.3], tmp_path / "d.svg").read_bytes()
    assert c == d
