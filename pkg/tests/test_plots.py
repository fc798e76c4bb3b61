"""Chart rendering: schema gate, exact series fidelity, script exit codes."""

import subprocess
import sys
from pathlib import Path

import pytest

pytest.importorskip("matplotlib")

import _chartcheck as cc

GOLDEN = Path(__file__).parent / "data" / "bench_golden.csv"
HEADER = ("scenario,cycle,morphology_id,episodes,mean_return,"
          "t_generate_ns,t_optimize_ns,param_count,hidden_mem_bytes,"
          "theta_version")


@pytest.fixture(scope="module")
def render():
    return cc.load_render()


def run_script(*argv):
    proc = subprocess.run(
        [sys.executable, str(cc.RENDER_PATH), *argv],
        capture_output=True, text=True, cwd=cc.RENDER_PATH.parent.parent)
    return proc.returncode, proc.stdout, proc.stderr


class TestSchemaGate:
    def test_golden_header_accepted(self, render):
        rows = render.read_rows(str(GOLDEN))
        assert len(rows) == 58

    def test_missing_column_is_named(self, render, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text(HEADER.replace(",t_optimize_ns", "") + "\n")
        with pytest.raises(render.SchemaError, match="t_optimize_ns"):
            render.read_rows(str(bad))

    def test_unexpected_column_is_named(self, render, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text(HEADER + ",bogus\n")
        with pytest.raises(render.SchemaError, match="bogus"):
            render.read_rows(str(bad))

    def test_misordered_column_is_named(self, render, tmp_path):
        bad = tmp_path / "bad.csv"
        cols = HEADER.split(",")
        cols[0], cols[1] = cols[1], cols[0]
        bad.write_text(",".join(cols) + "\n")
        with pytest.raises(render.SchemaError, match="misplaced"):
            render.read_rows(str(bad))

    def test_zero_byte_file_is_rejected(self, render, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("")
        with pytest.raises(render.SchemaError):
            render.read_rows(str(bad))

    def test_bad_value_is_named(self, render, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text(HEADER + "\nsingle_mem,zero,1,1,0.5,1,1,1,1,1\n")
        with pytest.raises(render.SchemaError, match="cycle"):
            render.read_rows(str(bad))

    def test_short_row_is_rejected(self, render, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text(HEADER + "\nsingle_mem,0,1\n")
        with pytest.raises(render.SchemaError, match="fields"):
            render.read_rows(str(bad))


class TestSeriesFidelity:
    def test_learning_curves_match_csv(self, render):
        fig = render.build_figure("learning_curves", str(GOLDEN))
        rows = cc.read_csv(GOLDEN)
        assert cc.extract_curves(fig) == expected_as_lists(rows)

    def test_one_series_per_scenario(self, render):
        fig = render.build_figure("learning_curves", str(GOLDEN))
        rows = cc.read_csv(GOLDEN)
        assert len(fig.axes[0].lines) == len(cc.scenarios_in_order(rows))

    def test_time_breakdown_matches_csv(self, render):
        fig = render.build_figure("time_breakdown", str(GOLDEN))
        rows = cc.read_csv(GOLDEN)
        scenarios, gen, opt = cc.expected_breakdown(rows)
        labels, got_gen, got_opt, bottoms = cc.extract_breakdown(fig)
        assert labels == scenarios
        assert got_gen == gen
        assert got_opt == opt
        # the optimize bars sit exactly on top of the generate bars
        assert bottoms == gen

    def test_pipeline_timeline_matches_csv(self, render):
        fig = render.build_figure("pipeline_timeline", str(GOLDEN))
        rows = cc.read_csv(GOLDEN)
        want = cc.expected_timeline(rows)
        got = cc.extract_timeline(fig)
        assert [g[1:] for g in got] == [w[1:] for w in want]
        assert [g[0] for g in got] == [f"morphology {w[0]}" for w in want]

    def test_timeline_spans_abut(self, render):
        # sequential pipeline: each phase starts where the previous ended
        fig = render.build_figure("pipeline_timeline", str(GOLDEN))
        spans = cc.extract_timeline(fig)
        assert spans
        prev_end = 0.0
        for _, (gen_start, gen_len), (opt_start, opt_len) in spans:
            assert opt_start == gen_start + gen_len
            assert gen_start == pytest.approx(prev_end, rel=1e-12, abs=1e-15)
            prev_end = opt_start + opt_len

    def test_scaling_fit_matches_csv(self, render):
        fig = render.build_figure("scaling_fit", str(GOLDEN))
        rows = cc.read_csv(GOLDEN)
        assert cc.extract_scaling(fig) == cc.expected_scaling(rows)

    def test_scaling_fit_annotates_r_squared(self, render):
        fig = render.build_figure("scaling_fit", str(GOLDEN))
        texts = [t.get_text() for t in fig.axes[0].texts]
        assert any("R^2" in t for t in texts)

    def test_rendering_twice_extracts_identical_series(self, render):
        one = render.build_figure("learning_curves", str(GOLDEN))
        two = render.build_figure("learning_curves", str(GOLDEN))
        assert cc.extract_curves(one) == cc.extract_curves(two)


def expected_as_lists(rows):
    return {s: (list(c), list(m))
            for s, (c, m) in cc.expected_curves(rows).items()}


class TestScriptInterface:
    @pytest.mark.parametrize("kind", ["learning_curves", "time_breakdown",
                                      "pipeline_timeline", "scaling_fit"])
    def test_renders_png(self, kind, tmp_path):
        out = tmp_path / f"{kind}.png"
        code, _, err = run_script("--kind", kind, "--in", str(GOLDEN),
                                  "--out", str(out))
        assert code == 0, err
        assert out.stat().st_size > 0
        assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_header_only_csv_renders_empty_axes(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text(HEADER + "\n")
        for kind in ("learning_curves", "time_breakdown",
                     "pipeline_timeline", "scaling_fit"):
            out = tmp_path / f"{kind}.png"
            code, _, err = run_script("--kind", kind, "--in", str(empty),
                                      "--out", str(out))
            assert code == 0, err
            assert out.stat().st_size > 0

    def test_schema_mismatch_exits_one_naming_column(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text(HEADER.replace(",t_optimize_ns", "") + "\n")
        code, _, err = run_script("--kind", "time_breakdown", "--in",
                                  str(bad), "--out", str(tmp_path / "x.png"))
        assert code == 1
        assert "t_optimize_ns" in err

    def test_missing_input_exits_one(self, tmp_path):
        code, _, err = run_script("--kind", "scaling_fit", "--in",
                                  str(tmp_path / "nope.csv"), "--out",
                                  str(tmp_path / "x.png"))
        assert code == 1
        assert err

    def test_unknown_kind_exits_two(self, tmp_path):
        code, _, _ = run_script("--kind", "pie", "--in", str(GOLDEN),
                                "--out", str(tmp_path / "x.png"))
        assert code == 2

    def test_missing_arguments_exit_two(self):
        code, _, _ = run_script("--kind", "learning_curves")
        assert code == 2
