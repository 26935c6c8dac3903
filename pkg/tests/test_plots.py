import csv

import numpy as np
import pytest

from melai import plots
from melai.loop import GENERATION_FIELDS, INDIVIDUAL_FIELDS


def write_run(path, best, individuals=()):
    path.mkdir(parents=True)
    with open(path / "generations.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, GENERATION_FIELDS, restval="nan")
        w.writeheader()
        for g, v in enumerate(best):
            w.writerow({"generation": g, "best_fitness": v, "truncated": 0})
    with open(path / "individuals.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, INDIVIDUAL_FIELDS, restval="")
        w.writeheader()
        for row in individuals:
            w.writerow(row)
    return path


def quartiles_by_sorting(col):
    """Linear-interpolation percentiles computed by hand."""
    s = sorted(col)
    def q(p):
        pos = p * (len(s) - 1)
        lo = int(pos)
        hi = min(lo + 1, len(s) - 1)
        return s[lo] + (s[hi] - s[lo]) * (pos - lo)
    return q(0.25), q(0.5), q(0.75)


def test_band_matches_quantile_oracle():
    rng = np.random.default_rng(0)
    data = rng.random((10, 7))
    med, q1, q3 = plots.band(data)
    for j in range(7):
        o1, om, o3 = quartiles_by_sorting(data[:, j])
        assert (q1[j], med[j], q3[j]) == pytest.approx((o1, om, o3), abs=1e-12)


def test_band_ignores_missing_generations():
    data = plots.stack([np.array([1.0, 2.0, 3.0]), np.array([3.0])])
    med, q1, q3 = plots.band(data)
    assert med[0] == 2.0 and med[1] == 2.0 and med[2] == 3.0


def _count_fills(monkeypatch):
    import matplotlib.axes
    calls = []
    real = matplotlib.axes.Axes.fill_between
    def spy(self, *a, **k):
        calls.append(a)
        return real(self, *a, **k)
    monkeypatch.setattr(matplotlib.axes.Axes, "fill_between", spy)
    return calls


def test_single_run_has_no_band(tmp_path, monkeypatch):
    calls = _count_fills(monkeypatch)
    run = write_run(tmp_path / "r", [0.2, 0.5, 0.9])
    plots.plot_metric({"MEL": [run]}, "best_fitness", tmp_path / "f.svg")
    assert calls == []
    assert (tmp_path / "f.svg").read_text().lstrip().startswith("<?xml")


def test_replicates_get_interquartile_band(tmp_path, monkeypatch):
    calls = _count_fills(monkeypatch)
    rng = np.random.default_rng(1)
    runs = [write_run(tmp_path / f"r{i}", rng.random(4)) for i in range(10)]
    plots.plot_metric({"MELAI": runs}, "best_fitness", tmp_path / "f.svg")
    assert len(calls) == 1
    gens, q1, q3 = calls[0]
    data = np.array([plots.read_csv(r / "generations.csv")["best_fitness"] for r in runs])
    for j in range(4):
        o1, _, o3 = quartiles_by_sorting(data[:, j])
        assert q1[j] == pytest.approx(o1) and q3[j] == pytest.approx(o3)


def test_organ_histogram_keeps_only_successful_robots(tmp_path):
    def ind(f, s, w, j, c):
        return {"generation": 0, "index": 0, "evaluated": 1, "degenerate": 0, "num_sensors": s,
                "num_wheels": w, "num_joints": j, "num_casters": c, "f_star": f}
    run = write_run(tmp_path / "r", [0.9], [ind(0.97, 1, 2, 0, 1), ind(0.94, 3, 3, 3, 3),
                                            ind(0.95, 0, 4, 1, 0), ind(0.99, "", "", "", 0)])
    counts = plots.successful_organ_counts([run])
    assert counts["num_wheels"].tolist() == [2, 4]
    assert counts["num_sensors"].tolist() == [1, 0]
    assert counts["num_joints"].tolist() == [0, 1]
    plots.plot_figure({"MEL": [run]}, "organs", tmp_path / "organs.svg")
    assert (tmp_path / "organs.svg").exists()


def test_empty_run_set_is_an_error(tmp_path):
    with pytest.raises(ValueError):
        plots.plot_figure({"MEL": []}, "best_fitness", tmp_path / "x.svg")
    with pytest.raises(ValueError):
        plots.plot_figure({"MEL": [tmp_path]}, "nonsense", tmp_path / "x.svg")
