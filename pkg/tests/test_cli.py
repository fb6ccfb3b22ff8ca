"""End-to-end tests of the pipeline subcommands and their artifacts."""

import csv
import json
from dataclasses import replace

import numpy as np
import pytest

import flowshap as fs
from flowshap import cli
from flowshap.config import RunConfig, load_config_file, write_config_file

from conftest import replay_forward_trace, write_flow_csv


@pytest.fixture
def prepared(tmp_path):
    """A prepared run directory over a synthetic flow CSV."""
    csv_path = tmp_path / "flows.csv"
    write_flow_csv(csv_path, {"Benign": 60, "Pivoting": 30, "Recon": 30}, seed=1)
    cfg = RunConfig(
        input_csv=str(csv_path),
        output_dir=str(tmp_path / "out"),
        seed=7,
        n_estimators=4,
        max_depth=3,
        max_candidates=6,
    )
    report = cli.cmd_prepare(cfg)
    return cfg, report, tmp_path


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


class TestPrepare:
    def test_features_kept_is_77(self, prepared):
        _, report, _ = prepared
        assert report["features_kept"] == 77

    def test_clean_csv_drops_nothing(self, prepared):
        _, report, _ = prepared
        assert report["rows_dropped"] == 0
        assert report["rows_in"] == 120

    def test_dirty_rows_are_dropped(self, tmp_path):
        csv_path = tmp_path / "dirty.csv"
        write_flow_csv(csv_path, {"Benign": 20, "Attack": 20}, seed=2, dirty_rows=5)
        cfg = RunConfig(input_csv=str(csv_path), output_dir=str(tmp_path / "out"), seed=1)
        report = cli.cmd_prepare(cfg)
        assert report["rows_in"] == 45
        assert report["rows_dropped"] == 5

    def test_class_weights_match_emitted_histogram(self, prepared):
        _, report, _ = prepared
        hist = report["class_histogram"]
        weights = report["class_weights"]
        total = sum(hist.values())
        K = len(hist)
        for name, count in hist.items():
            assert weights[name] == pytest.approx(total / (K * count), rel=1e-12)

    def test_tables_written(self, prepared):
        cfg, report, _ = prepared
        train = fs.load_table(f"{cfg.output_dir}/{cli.TRAIN_TABLE}")
        test = fs.load_table(f"{cfg.output_dir}/{cli.TEST_TABLE}")
        assert train.n_rows == report["train_rows"]
        assert test.n_rows == report["test_rows"]
        assert train.n_features == 77

    def test_missing_input_fails(self, tmp_path):
        cfg = RunConfig(input_csv=str(tmp_path / "absent.csv"), output_dir=str(tmp_path / "o"))
        with pytest.raises(OSError):
            cli.cmd_prepare(cfg)


class TestTrain:
    def test_model_and_report_written(self, prepared):
        cfg, _, _ = prepared
        report = cli.cmd_train(cfg)
        assert (report.accuracy, report.macro.f1) == (1.0, 1.0)  # separable synthetic signal
        doc = read_json(f"{cfg.output_dir}/{cli.TRAIN_REPORT}")
        assert doc["accuracy"] == 1.0
        assert doc["timing"]["train_seconds"] > 0

    def test_rerun_is_byte_identical(self, prepared):
        cfg, _, _ = prepared
        cli.cmd_train(cfg)
        first = open(f"{cfg.output_dir}/{cli.MODEL_FILE}", "rb").read()
        cli.cmd_train(cfg)
        second = open(f"{cfg.output_dir}/{cli.MODEL_FILE}", "rb").read()
        assert first == second

    def test_zero_rounds_report_well_formed(self, prepared):
        cfg, _, _ = prepared
        report = cli.cmd_train(replace(cfg, n_estimators=0))
        doc = read_json(f"{cfg.output_dir}/{cli.TRAIN_REPORT}")
        assert 0.0 <= doc["accuracy"] <= 1.0
        assert len(doc["per_class"]) == 3
        assert len(fs.load_model(f"{cfg.output_dir}/{cli.MODEL_FILE}").trees) == 0


class TestExplain:
    def test_exports_and_additivity(self, prepared):
        cfg, _, _ = prepared
        cli.cmd_train(cfg)
        shap = cli.cmd_explain(cfg)
        out = cfg.output_dir
        ens = fs.load_model(f"{out}/{cli.MODEL_FILE}")
        test = fs.load_table(f"{out}/{cli.TEST_TABLE}")

        # reconstruct margins from the exported files alone
        sums = {}
        with open(f"{out}/{cli.SHAP_VALUES}", newline="") as fh:
            for row in csv.DictReader(fh):
                key = (int(row["sample_index"]), row["class"])
                sums[key] = sums.get(key, 0.0) + float(row["phi"])
        bases = read_json(f"{out}/{cli.SHAP_BASES}")["base_values"]
        margins = fs.predict_margins(ens, test.features)
        for (s, cname), phi_sum in sums.items():
            k = ens.class_names.index(cname)
            assert phi_sum + bases[cname] == pytest.approx(margins[s, k], abs=1e-6)

    def test_per_class_ranking_files(self, prepared):
        cfg, _, _ = prepared
        cli.cmd_train(cfg)
        cli.cmd_explain(cfg)
        ens = fs.load_model(f"{cfg.output_dir}/{cli.MODEL_FILE}")
        for k, name in enumerate(ens.class_names):
            path = f"{cfg.output_dir}/{cli._class_ranking_file(k, name)}"
            rows = list(csv.DictReader(open(path, newline="")))
            assert len(rows) == 77

    def test_global_ranking_matches_export_recomputation(self, prepared):
        cfg, _, _ = prepared
        cli.cmd_train(cfg)
        cli.cmd_explain(cfg)
        out = cfg.output_dir
        # aggregate straight from the long-form export
        totals = {}
        counts = set()
        by_class_feature = {}
        with open(f"{out}/{cli.SHAP_VALUES}", newline="") as fh:
            for row in csv.DictReader(fh):
                key = (row["class"], row["feature"])
                by_class_feature.setdefault(key, []).append(abs(float(row["phi"])))
                counts.add(int(row["sample_index"]))
        for (cname, feature), vals in by_class_feature.items():
            totals[feature] = totals.get(feature, 0.0) + sum(vals) / len(counts)
        expected = sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))
        got = list(csv.DictReader(open(f"{out}/{cli.GLOBAL_RANKING}", newline="")))
        assert [r["feature"] for r in got] == [name for name, _ in expected]
        for row, (_, score) in zip(got, expected):
            assert float(row["score"]) == pytest.approx(score, rel=1e-9)


class TestSelect:
    def test_filter_with_all_features_equals_train_report(self, prepared):
        cfg, _, _ = prepared
        cli.cmd_train(cfg)
        cfg_all = replace(cfg, method="correlation", k_for_filters=77)
        cli.cmd_select(cfg_all)
        train_doc = read_json(f"{cfg.output_dir}/{cli.TRAIN_REPORT}")
        select_doc = read_json(f"{cfg.output_dir}/{cli.SELECT_REPORT}")
        for field in ("accuracy", "per_class", "macro", "weighted"):
            assert train_doc[field] == select_doc[field]

    def test_shap_selection_trace_replays(self, prepared):
        cfg, _, _ = prepared
        cli.cmd_train(cfg)
        cli.cmd_explain(cfg)
        cli.cmd_select(cfg)
        doc = read_json(f"{cfg.output_dir}/{cli._selection_file('shap')}")
        assert doc["method"] == "shap"
        trace = [fs.Trial(t["feature"], t["f1"], t["accepted"]) for t in doc["trace"]]
        replay_selected, replay_best = replay_forward_trace(trace)
        assert replay_selected == doc["selected"]
        assert replay_best == pytest.approx(doc["f1_best"])

    def test_selected_model_uses_selected_features(self, prepared):
        cfg, _, _ = prepared
        cli.cmd_train(cfg)
        cli.cmd_explain(cfg)
        cli.cmd_select(cfg)
        doc = read_json(f"{cfg.output_dir}/{cli._selection_file('shap')}")
        model = fs.load_model(f"{cfg.output_dir}/{cli.SELECTED_MODEL}")
        assert model.feature_names == doc["selected"]

    def test_paper_faithful_scope(self, prepared):
        cfg, _, _ = prepared
        cli.cmd_train(cfg)
        cli.cmd_explain(cfg)
        cfg_test_scope = replace(cfg, evaluation_scope="test")
        cli.cmd_select(cfg_test_scope)
        doc = read_json(f"{cfg.output_dir}/{cli._selection_file('shap')}")
        assert doc["evaluation_scope"] == "test"

    def test_compare_writes_table(self, prepared):
        cfg, _, _ = prepared
        cli.cmd_train(cfg)
        cli.cmd_explain(cfg)
        cli.cmd_select(replace(cfg, k_for_filters=5), compare=True)
        rows = list(csv.DictReader(open(f"{cfg.output_dir}/{cli.COMPARISON}", newline="")))
        assert [r["method"] for r in rows] == ["shap", "correlation", "chi_square", "anova"]
        for row in rows:
            assert 0.0 <= float(row["macro_f1"]) <= 1.0
            assert row["features"]


class TestPipeline:
    def test_end_to_end_artifacts(self, prepared):
        cfg, _, _ = prepared
        cli.cmd_pipeline(cfg)
        out = cfg.output_dir
        expected = [
            cli.TRAIN_TABLE, cli.TEST_TABLE, cli.PREPARE_REPORT,
            cli.MODEL_FILE, cli.TRAIN_REPORT,
            cli.SHAP_VALUES, cli.SHAP_BASES, cli.GLOBAL_RANKING,
            cli._selection_file("shap"), cli.SELECT_REPORT,
            cli.EFFECTIVE_CONFIG,
        ]
        import os

        for name in expected:
            assert os.path.exists(f"{out}/{name}"), name

    def test_resume_skips_completed_stages(self, prepared):
        import os

        cfg, _, _ = prepared
        cli.cmd_pipeline(cfg)
        out = cfg.output_dir
        before = os.path.getmtime(f"{out}/{cli.MODEL_FILE}")
        os.remove(f"{out}/{cli.SELECT_REPORT}")
        cli.cmd_pipeline(cfg)
        assert os.path.getmtime(f"{out}/{cli.MODEL_FILE}") == before
        assert os.path.exists(f"{out}/{cli.SELECT_REPORT}")


class TestConfigFile:
    def test_round_trip_reproduces_run(self, prepared, tmp_path):
        cfg, _, _ = prepared
        echoed = f"{cfg.output_dir}/{cli.EFFECTIVE_CONFIG}"
        loaded = load_config_file(echoed)
        rerun_dir = tmp_path / "rerun"
        rerun = replace(loaded, output_dir=str(rerun_dir))
        cli.cmd_prepare(rerun)
        first = open(f"{cfg.output_dir}/{cli.PREPARE_REPORT}", "rb").read()
        second = open(f"{rerun_dir}/{cli.PREPARE_REPORT}", "rb").read()
        assert first == second

    def test_precedence_flags_over_file_over_defaults(self, tmp_path):
        ini = tmp_path / "conf.ini"
        write_config_file(RunConfig(seed=5, method="anova", k_for_filters=9), ini)
        args = cli._build_parser().parse_args(
            ["select", "--config", str(ini), "--method", "chi_square"]
        )
        cfg = cli.build_config(args)
        assert cfg.method == "chi_square"  # flag wins
        assert cfg.k_for_filters == 9      # file wins over default
        assert cfg.seed == 5

    def test_optional_fields_round_trip(self, tmp_path):
        ini = tmp_path / "conf.ini"
        write_config_file(RunConfig(max_candidates=None, patience=3), ini)
        cfg = load_config_file(ini)
        assert cfg.max_candidates is None
        assert cfg.patience == 3


class TestMainEntry:
    def test_success_exit_zero(self, tmp_path):
        csv_path = tmp_path / "flows.csv"
        write_flow_csv(csv_path, {"Benign": 10, "Attack": 10}, seed=3)
        rc = cli.main([
            "prepare", "--input", str(csv_path),
            "--output-dir", str(tmp_path / "out"), "--seed", "3",
        ])
        assert rc == 0

    def test_error_is_single_json_line_and_nonzero(self, tmp_path, capsys):
        rc = cli.main([
            "prepare", "--input", str(tmp_path / "missing.csv"),
            "--output-dir", str(tmp_path / "out"),
        ])
        assert rc == 1
        err = capsys.readouterr().err.strip()
        assert "\n" not in err
        doc = json.loads(err)
        assert "error" in doc and "message" in doc

    def test_paper_faithful_flag(self, tmp_path):
        args = cli._build_parser().parse_args(["pipeline", "--paper-faithful"])
        cfg = cli.build_config(args)
        assert cfg.evaluation_scope == "test"
