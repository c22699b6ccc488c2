import csv
import io
import xml.etree.ElementTree as ElementTree

import pytest

from libRDGSPy.report import composition_rows, ladder_rows, rd_svg, write_csv
from libRDGSPy.types import CompositionEntry


def test_write_csv(tmp_path):
    path = str(tmp_path / "rows.csv")
    text = write_csv(path, ["name", "value"], [{"name": "a", "value": 1, "extra": "x"}, {"name": "b,c", "value": 2.5}])
    assert text == 'name,value\na,1\n"b,c",2.5\n'
    with open(path, newline="") as csv_file:
        assert list(csv.DictReader(csv_file)) == [{"name": "a", "value": "1"}, {"name": "b,c", "value": "2.5"}]
    assert write_csv(None, ["name"], []) == "name\n"


def test_composition_rows_total():
    entries = [CompositionEntry("Header", 73, 0.073), CompositionEntry("Positions", 927, 0.927)]
    rows = composition_rows(entries, "file")
    assert rows[-1] == {"section": "file", "category": "Total", "bytes": 1000, "proportion": 1.0}
    assert [row["category"] for row in rows[:-1]] == ["Header", "Positions"]


def test_ladder_rows():
    rows = ladder_rows([CompositionEntry("3DGS", 2360, 0.0), CompositionEntry("Gaussian pruning", 1180, 0.5)])
    assert rows[1] == {"section": "savings", "category": "Gaussian pruning", "bytes": 1180, "proportion": 0.5}


def test_rd_svg(tmp_path):
    path = tmp_path / "rd.svg"
    svg = rd_svg([(2.0, 30.0), (1.0, 28.5), (float("nan"), 1.0)], str(path), title="Desk <scene>")
    assert path.read_text() == svg
    root = ElementTree.parse(io.StringIO(svg)).getroot()
    namespace = "{http://www.w3.org/2000/svg}"
    assert len(root.findall(namespace + "circle")) == 2
    polyline = root.find(namespace + "polyline")
    first, second = polyline.get("points").split()
    # Points are sorted by rate, so the cheaper point is drawn further left and lower.
    assert float(first.split(",")[0]) < float(second.split(",")[0])
    assert float(first.split(",")[1]) > float(second.split(",")[1])
    assert "Desk &lt;scene&gt;" in svg


@pytest.mark.parametrize("points", [[], [(1.0, 20.0)]])
def test_rd_svg_degenerate(points):
    root = ElementTree.fromstring(rd_svg(points))
    assert root.tag.endswith("svg")
