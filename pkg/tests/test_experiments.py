import json
from pathlib import Path

import pytest

from quickic.errors import InvalidArgument
from quickic.experiments import (
    TABLE1_COMPARISONS,
    ExperimentConfig,
    TrialReport,
    read_table,
    run_experiment,
    run_fa_histogram,
    run_gmm_experiment,
    run_mfa_experiment,
    run_table1,
    summarize,
    table1_frequencies,
    trial_seed,
    write_outputs,
)


def small(experiment, **params):
    return ExperimentConfig(experiment, trials=2, base_seed=11, params=params)


TABLE1 = {"cases": [["I", 100], ["III", 100]]}
GMM = {"datasets": {"triangle": {"n": 300, "m_max": 6}}}
MFA = {"datasets": {"mfa": {"n": 400, "m": 2, "k": [1, 1], "m_init": 3, "k_init": 2}}}


class TestConfig:
    def test_round_trip(self):
        cfg = ExperimentConfig("gmm", trials=3, base_seed=2**64 - 1, params={"epsilon": 0.01}, out="x")
        back = ExperimentConfig.from_json(cfg.to_json())
        assert back == cfg and back.to_json() == cfg.to_json()
        assert back.params["epsilon"] == 0.01 and "datasets" in back.params

    def test_defaults_merged(self):
        cfg = ExperimentConfig("table1", params={"bic_window": [3, 9]})
        assert cfg.params["bic_window"] == [3, 9] and cfg.params["cases"]
        assert cfg.methods == ["quick_bic", "bic", "alasso_bic"]

    @pytest.mark.parametrize(
        "bad",
        [
            {"experiment": "nope"},
            {"experiment": "gmm", "trials": 0},
            {"experiment": "gmm", "methods": ["bic"]},
            {"experiment": "gmm", "colour": "red"},
            {"trials": 2},
        ],
    )
    def test_invalid(self, bad):
        with pytest.raises(InvalidArgument):
            ExperimentConfig.from_dict(bad)

    def test_bad_json(self):
        with pytest.raises(InvalidArgument):
            ExperimentConfig.from_json("{")
        with pytest.raises(InvalidArgument):
            ExperimentConfig.from_json("[1]")


class TestSeeds:
    def test_trial_seed(self):
        a = trial_seed(0, "gmm", 3)
        assert a == trial_seed(0, "gmm", 3) and 0 <= a < 2**64
        assert len({trial_seed(0, "gmm", t) for t in range(100)}) == 100
        assert a != trial_seed(1, "gmm", 3) and a != trial_seed(0, "mfa", 3)


def _fields(reports):
    return [r.row()[:7] + r.row()[8:] for r in reports]


class TestTable1:
    def test_run_and_frequencies(self):
        res = run_table1(small("table1", **TABLE1))
        assert len(res.reports) == 2 * 2 * 3
        assert all(r.ok and r.duration >= 0 for r in res.reports)
        rows = res.tables["table1"][1:]
        for ds in ("I/100", "III/100"):
            for name, *_ in TABLE1_COMPARISONS:
                assert sum(r[3] for r in rows if r[0] == ds and r[1] == name) == 2

    def test_single_trial_sums_to_one(self):
        cfg = ExperimentConfig("table1", trials=1, params={"cases": [["II", 100]]})
        rows = run_table1(cfg).tables["table1"][1:]
        assert all(sum(r[3] for r in rows if r[1] == name) == 1 for name, *_ in TABLE1_COMPARISONS)

    def test_failed_trials_excluded(self):
        ok = lambda t, m, s: TrialReport(t, 0, "I/100", m, s, "", 0.0, 0.1, True)  # noqa: E731
        reports = [ok(0, "bic", 6), ok(0, "quick_bic", 6), ok(0, "alasso_bic", 9)]
        reports += [ok(1, "bic", 5), TrialReport(1, 0, "I/100", "quick_bic", None, "", None, 0.0, False, False, "x")]
        reports += [ok(1, "alasso_bic", 5)]
        freq = {(r[1], r[2]): r[3] for r in table1_frequencies(reports)}
        assert freq[("bic-quick_bic", "0")] == 1 and sum(v for (c, _), v in freq.items() if c == "bic-quick_bic") == 1
        assert freq[("bic-alasso_bic", "<")] == 1 and freq[("bic-alasso_bic", "0")] == 1

    def test_reproducible(self):
        a = run_table1(small("table1", **TABLE1))
        b = run_table1(small("table1", **TABLE1))
        assert _fields(a.reports) == _fields(b.reports)

    def test_threads_do_not_change_results(self):
        cfg = small("table1", cases=[["I", 100]])
        par = ExperimentConfig.from_dict({**cfg.to_dict(), "threads": 2})
        assert _fields(run_experiment(cfg).reports) == _fields(run_experiment(par).reports)

    def test_wrong_runner(self):
        with pytest.raises(InvalidArgument):
            run_table1(small("gmm", **GMM))


class TestOtherStudies:
    def test_fa(self):
        cfg = ExperimentConfig("fa_histogram", trials=2, methods=["quick_bic", "bic", "aic"], params={"n_values": [100]})
        res = run_fa_histogram(cfg)
        assert len(res.reports) == 6 and all(r.ok for r in res.reports)
        assert all(3 <= r.size <= 8 for r in res.reports)
        hist = res.tables["histogram"][1:]
        assert sum(r[3] for r in hist if r[1] == "bic") == 2

    def test_gmm(self):
        res = run_gmm_experiment(small("gmm", **GMM))
        assert all(r.ok for r in res.reports)
        assert all(json.loads(r.structure)["monotone"] for r in res.reports)
        traces = res.tables["traces"]
        assert traces[0] == ["dataset", "trial", "step", "npl", "after_event"] and len(traces) > 2

    def test_mfa(self):
        res = run_mfa_experiment(small("mfa", **MFA))
        assert all(r.ok for r in res.reports)
        for r in res.reports:
            s = json.loads(r.structure)
            assert s["m"] == r.size == len(s["k"]) and s["monotone"]
        counted = sum(r[2] for r in res.tables["factor_counts"][1:])
        assert counted == sum(r.size for r in res.reports)


class TestOutputs:
    def test_schema_and_summary(self, tmp_path):
        res = run_gmm_experiment(small("gmm", **GMM))
        out = write_outputs(res, tmp_path / "res")
        manifest = json.loads((out / "manifest.json").read_text())
        assert sorted(p.name for p in out.glob("*.csv")) == manifest["tables"]
        assert ExperimentConfig.from_dict(manifest["config"]) == res.config
        trials = read_table(out / "trials.csv")
        assert list(trials[0]) == list(TrialReport.FIELDS) and len(trials) == 2
        assert list(read_table(out / "histogram.csv")[0]) == ["dataset", "method", "value", "count"]
        timing = manifest["timing"]["triangle|quick_mml"]
        assert timing["trials"] == 2 and timing["median_seconds"] >= 0
        text = summarize(out)
        assert "experiment gmm" in text and "triangle" in text


@pytest.mark.parametrize("path", sorted((Path(__file__).parents[1] / "configs").glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = ExperimentConfig.load(path)
    assert cfg.experiment == path.stem and cfg.trials >= 1
