import re
import xml.etree.ElementTree as ET

import pytest

from wermlab.svg import Series, curve_series, render_svg_curve, write_svg_curve

NS = "{http://www.w3.org/2000/svg}"


def test_two_point_series(tmp_path):
    p = tmp_path / "a.svg"
    write_svg_curve([{"label": "a", "points": [(0, 1), (1, 2)]}], "x", "y", p, metadata="prov")
    root = ET.parse(p).getroot()
    assert root.get("viewBox") == "0 0 800 500"
    lines = root.findall(f"{NS}polyline")
    assert len(lines) == 1
    assert len(lines[0].get("points").split()) == 2
    assert root.find(f"{NS}metadata").text == "prov"
    assert "href" not in p.read_text()


def test_empty_and_unsorted():
    with pytest.raises(ValueError):
        render_svg_curve([], "x", "y")
    with pytest.raises(ValueError):
        render_svg_curve([Series("a", ((1, 0), (0, 1)))], "x", "y")
    with pytest.raises(ValueError):
        render_svg_curve([Series("a", ())], "x", "y")


def test_bands_and_determinism():
    rows = [{"alpha": a / 10, "mean_erm": 1.0 / a, "std_erm": 0.1, "mean_werm": 0.5 / a, "std_werm": None}
            for a in range(1, 11)]
    s1 = render_svg_curve(curve_series(rows), "alpha", "risk", metadata="m")
    s2 = render_svg_curve(curve_series(rows), "alpha", "risk", metadata="m")
    assert s1 == s2
    root = ET.fromstring(s1)
    assert len(root.findall(f"{NS}polygon")) == 2
    assert len(root.findall(f"{NS}polyline")) == 2


def test_escapes_labels():
    s = render_svg_curve([Series("a<b & c", ((0, 0), (1, 1)))], "x<", "y&", title="t>")
    ET.fromstring(s)
