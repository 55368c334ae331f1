import io

import numpy as np
import pytest

from homstokes import cli
from homstokes.errors import ConfigError
from homstokes.fields.gridio import read_grid_field


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _run(sub, cfg, out):
    stream = io.StringIO()
    code = cli.run(sub, cfg, out, stream)
    return code, stream.getvalue()


def _csv_rows(path):
    lines = path.read_text().splitlines()
    return lines[0], [line.split(",") for line in lines[1:]]


# configuration parsing -----------------------------------------------------------------------
@pytest.mark.parametrize("text, fragment", [
    ("[problem]\ndim = 2\n  colour = red\n", "line 3, column 3: unknown key 'colour'"),
    ("[problem]\ndim = 2\n[extras]\n", "line 3"),
    ("dim = 2\n", "line 1"),
    ("[problem]\ndim = 2\ndim = 3\n", "line 3"),
    ("[problem]\ndim 2\n", "line 2"),
    ("[problem]\ndim = 2\ncoefficient = 2 + sin(2*pi*y1\n", "line 3"),
    ("[problem]\ndim = 2\n[grid]\npoints_per_axis = 31\n", "line 4"),
    ("[problem]\ndim = 2\n[solver]\ntol = 1e-2\n", "line 4"),
    ("[problem]\ndim = 2\ncoefficient = 2 + sin(2*pi*y1*0.5)\n", "line 3"),
    ("[problem]\ndim = 2\ncoefficient = sin(2*pi*y1)\n", "line 3"),
])
def test_invalid_configs_exit_2_with_location(tmp_path, text, fragment):
    code, msg = _run("cell", _write(tmp_path, text), tmp_path / "out")
    assert code == 2
    assert fragment in msg


def test_missing_dimension_is_reported():
    with pytest.raises(ConfigError, match="dim"):
        cli.parse_config_text("[problem]\ncoefficient = 1\n")


def test_number_syntax():
    cfg = cli.parse_config_text("[problem]\ndim = 2\n[geometry]\nnormal = 1, sqrt(2)\n"
                                "[verify]\nepsilons = 1/4, 1/8, 1/16\n")
    assert cfg["geometry"]["normal"] == pytest.approx((1.0, 2 ** 0.5))
    assert cfg["verify"]["epsilons"] == (0.25, 0.125, 0.0625)


def test_thread_override(tmp_path, monkeypatch):
    cfg = cli.parse_config_text("[problem]\ndim = 2\n[solver]\nthreads = 3\n")
    monkeypatch.delenv(cli.THREADS_ENV, raising=False)
    assert cli._threads(cfg) == 3
    monkeypatch.setenv(cli.THREADS_ENV, "1")
    assert cli._threads(cfg) == 1
    monkeypatch.setenv(cli.THREADS_ENV, "zero")
    code, msg = _run("cell", _write(tmp_path, "[problem]\ndim = 2\n"), tmp_path / "out")
    assert code == 2 and cli.THREADS_ENV in msg


# subcommands ---------------------------------------------------------------------------------
def test_cell_identity(tmp_path):
    cfg = _write(tmp_path, "[problem]\ndim = 2\ncoefficient = 1\n")
    code, msg = _run("cell", cfg, tmp_path / "out")
    assert code == 0, msg
    first, rows = _csv_rows(tmp_path / "out" / "homogenized_tensor.csv")
    assert first.startswith("# config_sha256=") and len(first) == len("# config_sha256=") + 64
    assert rows[0] == ["alpha", "beta", "i", "j", "value"]
    A0 = np.zeros((2, 2, 2, 2))
    for a, b, i, j, v in rows[1:]:
        A0[int(a) - 1, int(b) - 1, int(i) - 1, int(j) - 1] = float(v)
    assert np.array_equal(A0, np.einsum("ab,ij->abij", np.eye(2), np.eye(2)))
    chi = read_grid_field(tmp_path / "out" / "chi.grid")
    assert np.abs(chi.samples).max() == 0


def test_tail_constant_data_and_report(tmp_path):
    cfg = _write(tmp_path, "[problem]\ndim = 2\ncoefficient = 2 + sin(2*pi*(y1 + y2))\n"
                           "boundary_data = 0.5, -2\n[geometry]\nnormal = 1, 2\n")
    out = tmp_path / "out"
    code, msg = _run("tail", cfg, out)
    assert code == 0, msg
    _, rows = _csv_rows(out / "tail_formula.csv")
    U = {r[0]: float(r[1]) for r in rows[1:] if r[0] in ("1", "2")}
    assert U["1"] == pytest.approx(0.5, abs=1e-8) and U["2"] == pytest.approx(-2.0, abs=1e-8)
    code, msg = _run("report", cfg, out)
    assert code == 0, msg
    text = (out / "report.md").read_text()
    assert "## tail" in text and "checks passed" in text


def test_report_without_summaries_is_numerical_failure(tmp_path):
    code, msg = _run("report", _write(tmp_path, "[problem]\ndim = 2\n"), tmp_path / "empty")
    assert code == 3 and "report" in msg


def test_numerical_failure_names_stage(tmp_path):
    cfg = _write(tmp_path, "[problem]\ndim = 3\n[grid]\npoints_per_axis = 8\n"
                           "[green]\nhomogenization = false\nsource_height = 0.3\n")
    code, msg = _run("verify-green", cfg, tmp_path / "out")
    assert code == 3 and "stage" in msg


def test_failed_invariant_exits_4(tmp_path, monkeypatch):
    monkeypatch.setitem(cli.RUNNERS, "cell", lambda cfg, out, threads: [cli.Check("x", "q", 2.0, 1.0, "le")])
    code, msg = _run("cell", _write(tmp_path, "[problem]\ndim = 2\n"), tmp_path / "out")
    assert code == 4 and "invariant violated: x" in msg
    assert not cli.Check("y", "q", float("nan"), 1.0, "ge").passed


def test_main_entry_point(tmp_path):
    cfg = _write(tmp_path, "[problem]\ndim = 2\n")
    assert cli.main(["cell", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    with pytest.raises(SystemExit):
        cli.main(["nope", "--config", str(cfg)])


@pytest.mark.parametrize("sub", ["cell", "bl", "tail"])
def test_reruns_are_bitwise_identical(tmp_path, sub):
    cfg = _write(tmp_path, "[problem]\ndim = 2\ncoefficient = 2 + sin(2*pi*(y1 + y2))\n"
                           "boundary_data = cos(2*pi*y1)*sin(2*pi*y2), 1 + sin(2*pi*y1)\n"
                           "[geometry]\nnormal = 1, 2\nshifts = 0, sqrt(5)\n")
    outs = []
    for k in range(2):
        code, msg = _run(sub, cfg, tmp_path / f"o{k}")
        assert code == 0, msg
        outs.append({p.name: p.read_bytes() for p in sorted((tmp_path / f"o{k}").iterdir())})
    assert outs[0] == outs[1]
