import csv
import json

import pytest

from stockspline.cli import main


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "stockspline" in capsys.readouterr().out


def test_simulate_then_fit_exit_codes(tmp_path, capsys):
    stock = tmp_path / "stock"
    assert main(["simulate", "--seed", "3", "--out", str(stock)]) == 0
    assert (stock / "obs.csv").exists()
    assert (stock / "truth.json").exists()

    out = tmp_path / "fit"
    code = main(["fit", "--data", str(stock), "--out", str(out)])
    assert code == 0
    assert "converged" in capsys.readouterr().out

    result = json.loads((out / "fit.json").read_text())
    assert result["converged"] is True
    with open(out / "params.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {"block", "fleet", "age", "estimate", "se"} <= set(rows[0])
    assert any(r["block"] == "catch_sd" for r in rows)


def test_fit_maximal_config_and_compare(tmp_path, capsys):
    stock = tmp_path / "stock"
    main(["simulate", "--seed", "3", "--out", str(stock)])
    cfg = tmp_path / "max.json"
    cfg.write_text('{"blocks": "maximal"}')
    fit1, fit2 = tmp_path / "f1", tmp_path / "f2"
    assert main(["fit", "--data", str(stock), "--out", str(fit1)]) == 0
    assert main(["fit", "--data", str(stock), "--config", str(cfg),
                 "--out", str(fit2)]) == 0

    cmp_dir = tmp_path / "cmp"
    assert main(["compare", "--fits", f"s1={fit1 / 'fit.json'}",
                 f"max={fit2 / 'fit.json'}", "--out", str(cmp_dir)]) == 0
    with open(cmp_dir / "ssb.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["model"] for r in rows} == {"s1", "max"}
    for r in rows:
        assert float(r["lo"]) <= float(r["estimate"]) <= float(r["hi"])
    with open(cmp_dir / "curves.csv") as fh:
        crows = list(csv.DictReader(fh))
    assert any(r["block"] == "catchability[1]" for r in crows)


def test_fit_error_exit_code(tmp_path, capsys):
    code = main(["fit", "--data", str(tmp_path / "nowhere"),
                 "--out", str(tmp_path / "out")])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_validate_writes_reports(tmp_path, capsys):
    from stockspline.data import save_stock
    from stockspline.simulate import default_truth, simulate

    truth = default_truth(n_ages=6, n_years=24, n_surveys=2)
    data, _ = simulate(truth, seed=1)
    stock = tmp_path / "stock"
    save_stock(data, stock)
    base = tmp_path / "base.json"
    base.write_text("{}")
    alt = tmp_path / "alt.json"
    alt.write_text('{"blocks": [0, 0, 0, 0, 0, 0]}')

    out = tmp_path / "val"
    # forward only keeps the runtime tolerable; cv shares the same machinery
    code = main(["validate", "--data", str(stock),
                 "--configs", f"base={base}", f"onegrp={alt}",
                 "--mode", "forward", "--out", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["baseline"] == "base"
    assert report["models"] == ["base", "onegrp"]
    assert all(v == 1.0 for k, v in report["standardized_rmse"].items()
               if k.startswith("base|"))
    with open(out / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and {"stock", "model", "fold", "criterion", "rmse",
                     "converged"} <= set(rows[0])
    assert (out / "boxplot_data.csv").exists()
