import csv

import numpy as np
import pytest

from twogrid.cli import EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE, load_config, main, UsageError
from twogrid.linalg import read_matrix_market
from twogrid.problems import make_pair
from twogrid.studies import STUDIES

SMALL = ["--family", "convection-diffusion", "--fine-h", "1/32", "--coarse-h", "1/16"]


def _ini(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_list_studies(capsys):
    assert main(["list-studies"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in STUDIES:
        assert name in out
    assert "custom" in out


def test_help_and_bad_usage(capsys):
    assert main(["--help"]) == EXIT_OK
    assert main([]) == EXIT_USAGE
    assert main(["solve", "--family", "poisson"]) == EXIT_USAGE
    assert main(["run", "no-such-study"]) == EXIT_USAGE
    assert "unknown study" in capsys.readouterr().err


def test_solve_small(tmp_path, capsys):
    ini = _ini(tmp_path, "[solver]\ncoarse_m = 40\ncoarse_k = 20\nnev = 10\nm3 = 30\n")
    out = tmp_path / "o"
    code = main(["solve", *SMALL, "--config", str(ini), "--out", str(out)])
    assert code == EXIT_OK
    rows = _rows(out / "summary.csv")
    assert len(rows) == 1 and rows[0]["status"] == "converged"
    assert float(rows[0]["relres"]) <= 1e-9 and int(rows[0]["k"]) in (20, 21)
    traces = list(out.glob("trace_*.csv"))
    assert len(traces) == 1
    t = _rows(traces[0])
    assert {r["level"] for r in t} == {"coarse", "fine"}
    assert "status=converged" in capsys.readouterr().out


def test_rerun_byte_identical(tmp_path):
    ini = _ini(tmp_path, "[solver]\ncoarse_m = 40\ncoarse_k = 20\nnev = 10\n"
                         "engine = bicgstab\nncyc = 5\n")
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["solve", *SMALL, "--config", str(ini), "--out", str(out)]) == EXIT_OK
        outs.append(out)
    for f in sorted(p.name for p in outs[0].iterdir()):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_flags_override_config(tmp_path):
    ini = _ini(tmp_path, "[problem]\nfamily = biharmonic\nfine_h = 1/16\n"
                         "[solver]\nengine = gmres\nm3 = 20\n")
    out = tmp_path / "o"
    assert main(["solve", "--config", str(ini), "--engine", "idr", "--fine-h", "1/24",
                 "--out", str(out)]) == EXIT_OK
    row = _rows(out / "summary.csv")[0]
    assert row["engine"] == "idr" and row["fine_h"] == "1/24"
    assert row["family"] == "biharmonic" and int(row["k"]) == 0


def test_not_converged_exit(tmp_path, capsys):
    ini = _ini(tmp_path, "[solver]\nengine = gmres\nm3 = 5\nmax_mvp = 20\n")
    code = main(["solve", "--fine-h", "1/32", "--config", str(ini),
                 "--out", str(tmp_path / "o")])
    assert code == EXIT_NOT_CONVERGED
    assert "not converged" in capsys.readouterr().err
    # outputs are still written
    assert _rows(tmp_path / "o" / "summary.csv")[0]["status"] == "maxit"


def test_dump_matrices(tmp_path):
    out = tmp_path / "o"
    ini = _ini(tmp_path, "[solver]\ncoarse_m = 40\ncoarse_k = 20\nnev = 10\n")
    assert main(["solve", *SMALL, "--config", str(ini), "--out", str(out),
                 "--dump-matrices"]) == EXIT_OK
    fine = sorted(out.glob("*_fine.mtx"))
    coarse = sorted(out.glob("*_coarse.mtx"))
    assert len(fine) == 1 and len(coarse) == 1
    P = make_pair("convection-diffusion", "1/32", "1/16")
    A = read_matrix_market(fine[0])
    np.testing.assert_array_equal(A.toarray(), P.fine_matrix.toarray())
    assert read_matrix_market(coarse[0]).nrows == P.coarse_matrix.nrows


def test_load_config_types(tmp_path):
    ini = _ini(tmp_path, "[problem]\nkappa = 50\nrandom_rhs = yes\n"
                         "[solver]\nreorth = on\ncoarse_rtol = none\nndefl = 7\n"
                         "[study]\nscale = desk\n")
    problem, solver, study = load_config(ini)
    assert problem == {"kappa": 50.0, "random_rhs": True}
    assert solver == {"reorth": True, "coarse_rtol": None, "ndefl": 7}
    assert study == {"scale": "desk"}


@pytest.mark.parametrize("text", [
    "[solvers]\nm3 = 1\n",
    "[solver]\nbogus = 1\n",
    "[problem]\ncolour = red\n",
    "[solver]\nm3 = many\n",
    "[solver]\nreorth = maybe\n",
    "not an ini file",
])
def test_bad_config(tmp_path, text):
    ini = _ini(tmp_path, text)
    with pytest.raises(UsageError):
        load_config(ini)
    assert main(["solve", "--fine-h", "1/8", "--config", str(ini),
                 "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_missing_config(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.ini")]) == EXIT_USAGE


def test_invalid_solver_value(tmp_path):
    ini = _ini(tmp_path, "[solver]\nengine = cg\n")
    assert main(["solve", "--fine-h", "1/8", "--config", str(ini),
                 "--out", str(tmp_path / "o")]) == EXIT_USAGE
