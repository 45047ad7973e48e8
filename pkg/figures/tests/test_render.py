from __future__ import annotations

import csv
import shutil
from pathlib import Path

import pytest

from staircase_figures.cli import main

FIXTURES = Path(__file__).parent / "fixtures"

KEY_CSV = {
    "staircase": "staircase_exact.csv",
    "collapse": "collapse.csv",
    "filtering": "staircase_exact.csv",
    "floor": "stability.csv",
    "sampling": "sampling.csv",
    "bias": "bias_variance.csv",
}


@pytest.mark.parametrize("fig_id", sorted(KEY_CSV))
def test_renders_from_fixture(fig_id, tmp_path):
    out = tmp_path / f"{fig_id}.png"
    rc = main([fig_id, "--run", str(FIXTURES / fig_id), "--out", str(out)])
    assert rc == 0
    assert out.exists() and out.stat().st_size > 1000


@pytest.mark.parametrize("fig_id", sorted(KEY_CSV))
def test_missing_column_fails_with_its_name(fig_id, tmp_path, capsys):
    src = FIXTURES / fig_id
    run = tmp_path / "run"
    shutil.copytree(src, run)
    target = run / KEY_CSV[fig_id]
    with open(target, newline="") as fh:
        rows = list(csv.reader(fh))
    drop = 1  # remove the second column everywhere
    dropped_name = rows[0][drop]
    with open(target, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        for r in rows:
            wr.writerow(r[:drop] + r[drop + 1:])
    rc = main([fig_id, "--run", str(run), "--out", str(tmp_path / "x.png")])
    assert rc != 0
    err = capsys.readouterr().err
    assert dropped_name in err
    assert KEY_CSV[fig_id] in err


def test_missing_artifact_fails_loudly(tmp_path, capsys):
    rc = main(["sampling", "--run", str(tmp_path), "--out", str(tmp_path / "x.png")])
    assert rc != 0
    assert "sampling.csv" in capsys.readouterr().err


def test_staircase_renders_without_optional_binomial(tmp_path):
    src = FIXTURES / "staircase"
    run = tmp_path / "run"
    shutil.copytree(src, run)
    (run / "staircase_binomial.csv").unlink()
    out = tmp_path / "no_binom.png"
    assert main(["staircase", "--run", str(run), "--out", str(out)]) == 0
    assert out.exists()
    # a header-only optional file is also fine: the series is simply absent
    (run / "staircase_binomial.csv").write_text(
        "lambda,N,Z,logZ,H,provenance,tau\n", encoding="utf-8")
    out2 = tmp_path / "empty_binom.png"
    assert main(["staircase", "--run", str(run), "--out", str(out2)]) == 0


def test_rendering_is_deterministic(tmp_path):
    a = tmp_path / "a.png"
    b = tmp_path / "b.png"
    for out in (a, b):
        assert main(["collapse", "--run", str(FIXTURES / "collapse"),
                     "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_svg_and_pdf_outputs(tmp_path):
    for suffix in (".svg", ".pdf"):
        out = tmp_path / ("fig" + suffix)
        assert main(["floor", "--run", str(FIXTURES / "floor"),
                     "--out", str(out)]) == 0
        assert out.stat().st_size > 500
