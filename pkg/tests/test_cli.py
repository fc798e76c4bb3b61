"""End-to-end command-line behavior: verbs, exit codes, file outputs."""

import csv
import json
import re

import numpy as np
import pytest

from heatlab import cli, env, pomdp, train
from heatlab.policy import init_policy, save_checkpoint

MEETSIGNAL = "instances/meetsignal.json"
TIGER = "instances/tiger.json"


@pytest.fixture(scope="module")
def family_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("fam") / "family.json"
    env.generate_family(4, 8, 2, seed=3).save(path)
    return str(path)


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def parsed_value(stdout):
    match = re.search(r"V\*=([^\s]+)", stdout)
    assert match, stdout
    return float(match.group(1))


class TestGenFamily:
    def test_writes_manifest_and_config(self, capsys, tmp_path):
        out = tmp_path / "fam.json"
        code, _, _ = run(capsys, "gen-family", "--kmax", "3", "--train", "4",
                         "--eval", "2", "--seed", "1", "--out", str(out),
                         "--out-dir", str(tmp_path))
        assert code == 0
        manifest = env.FamilyManifest.load(out)
        assert len(manifest.train_masks) == 4
        assert len(manifest.eval_masks) == 2
        doc = json.loads((tmp_path / "config.json").read_text())
        assert doc["verb"] == "gen-family"

    def test_same_seed_same_bytes(self, capsys, tmp_path):
        args = ["gen-family", "--kmax", "3", "--train", "4", "--eval", "2",
                "--seed", "9", "--out-dir", str(tmp_path)]
        run(capsys, *args, "--out", str(tmp_path / "a.json"))
        run(capsys, *args, "--out", str(tmp_path / "b.json"))
        assert (tmp_path / "a.json").read_bytes() == \
            (tmp_path / "b.json").read_bytes()

    def test_infeasible_family_exits_one(self, capsys, tmp_path):
        code, _, err = run(capsys, "gen-family", "--kmax", "2", "--train",
                           "6", "--eval", "2", "--out",
                           str(tmp_path / "x.json"), "--out-dir",
                           str(tmp_path))
        assert code == 1
        assert "error" in err

    def test_bad_kmax_exits_two(self, capsys, tmp_path):
        code, _, _ = run(capsys, "gen-family", "--kmax", "0", "--out",
                         str(tmp_path / "x.json"))
        assert code == 2


class TestSolveVerbs:
    def test_solve_exact_matches_library(self, capsys, family_path, tmp_path):
        code, out, _ = run(capsys, "solve-exact", "--family", family_path,
                           "--morphs", "0,1", "--horizon", "3",
                           "--out-dir", str(tmp_path))
        assert code == 0
        manifest = env.FamilyManifest.load(family_path)
        mdps = [env.compile_mdp(m, manifest.params)
                for m in manifest.train_masks[:2]]
        expected = pomdp.exact_value(pomdp.compose_gaitchain(mdps), None, 3)
        assert parsed_value(out) == expected  # %.17g round-trips float64

    def test_memo_flag_changes_nothing(self, capsys, family_path, tmp_path):
        base = ["solve-exact", "--family", family_path, "--morphs", "0,1",
                "--horizon", "4", "--out-dir", str(tmp_path)]
        _, out_plain, _ = run(capsys, *base)
        _, out_memo, _ = run(capsys, *base, "--memo")
        assert parsed_value(out_plain) == parsed_value(out_memo)

    def test_json_output(self, capsys, family_path, tmp_path):
        code, out, _ = run(capsys, "solve-exact", "--family", family_path,
                           "--morphs", "0", "--horizon", "2", "--json",
                           "--out-dir", str(tmp_path))
        assert code == 0
        doc = json.loads(out)
        assert set(doc) == {"V_star", "horizon"}
        assert doc["horizon"] == 2

    def test_reveal_never_hurts(self, capsys, family_path, tmp_path):
        base = ["solve-exact", "--family", family_path, "--morphs", "0,1",
                "--horizon", "3", "--out-dir", str(tmp_path)]
        _, hidden, _ = run(capsys, *base)
        _, revealed, _ = run(capsys, *base, "--reveal")
        assert parsed_value(revealed) >= parsed_value(hidden) - 1e-12

    def test_decide_both_sides(self, capsys, family_path, tmp_path):
        base = ["decide", "--family", family_path, "--morphs", "0",
                "--horizon", "3", "--out-dir", str(tmp_path)]
        _, out, _ = run(capsys, *base, "--K", "-1000")
        v = parsed_value(out)
        assert "decision=true" in out
        _, out_no, _ = run(capsys, *base, "--K", str(v + 0.1))
        assert "decision=false" in out_no
        _, out_yes, _ = run(capsys, *base, "--K", str(v - 0.1))
        assert "decision=true" in out_yes

    def test_solve_observable_dominates_hidden(self, capsys, family_path,
                                               tmp_path):
        common = ["--family", family_path, "--morphs", "0,1,2",
                  "--horizon", "3", "--out-dir", str(tmp_path)]
        _, obs_out, _ = run(capsys, "solve-observable", *common)
        _, hid_out, _ = run(capsys, "solve-exact", *common)
        assert parsed_value(obs_out) >= parsed_value(hid_out) - 1e-9

    def test_solve_observable_matches_library(self, capsys, family_path,
                                              tmp_path):
        _, out, _ = run(capsys, "solve-observable", "--family", family_path,
                        "--split", "eval", "--morphs", "all",
                        "--horizon", "2", "--out-dir", str(tmp_path))
        manifest = env.FamilyManifest.load(family_path)
        mdps = [env.compile_mdp(m, manifest.params)
                for m in manifest.eval_masks]
        expected = pomdp.solve_observable(
            mdps, np.full(len(mdps), 1 / len(mdps)), 2)
        assert parsed_value(out) == pytest.approx(expected, abs=1e-15)

    def test_explicit_prior(self, capsys, family_path, tmp_path):
        code, out, _ = run(capsys, "solve-exact", "--family", family_path,
                           "--morphs", "0,1", "--horizon", "2",
                           "--prior", "0.25,0.75", "--out-dir", str(tmp_path))
        assert code == 0
        manifest = env.FamilyManifest.load(family_path)
        mdps = [env.compile_mdp(m, manifest.params)
                for m in manifest.train_masks[:2]]
        composite = pomdp.compose_gaitchain(mdps, prior=np.array([0.25, 0.75]))
        assert parsed_value(out) == pomdp.exact_value(composite, None, 2)

    def test_unnormalized_prior_exits_one(self, capsys, family_path, tmp_path):
        code, _, err = run(capsys, "solve-exact", "--family", family_path,
                           "--morphs", "0,1", "--horizon", "2",
                           "--prior", "0.9,0.9", "--out-dir", str(tmp_path))
        assert code == 1 and "error" in err

    def test_bad_morph_index_exits_one(self, capsys, family_path, tmp_path):
        code, _, _ = run(capsys, "solve-exact", "--family", family_path,
                         "--morphs", "99", "--horizon", "2",
                         "--out-dir", str(tmp_path))
        assert code == 1

    def test_missing_family_file_exits_one(self, capsys, tmp_path):
        code, _, _ = run(capsys, "solve-exact", "--family",
                         str(tmp_path / "nope.json"), "--horizon", "2",
                         "--out-dir", str(tmp_path))
        assert code == 1

    def test_negative_horizon_exits_two(self, capsys, family_path):
        code, _, _ = run(capsys, "solve-exact", "--family", family_path,
                         "--horizon", "-1")
        assert code == 2

    def test_missing_horizon_exits_two(self, capsys, family_path):
        code, _, _ = run(capsys, "solve-exact", "--family", family_path)
        assert code == 2


class TestEmbed:
    def test_door_instance_one_step(self, capsys, tmp_path):
        # at horizon 1 every open risks the -100, so listening (-1) wins
        code, out, _ = run(capsys, "embed", "--pomdp", TIGER,
                           "--horizon", "1", "--out-dir", str(tmp_path))
        assert code == 0
        assert parsed_value(out) == pytest.approx(-1.0, abs=1e-12)

    def test_matches_library_at_depth(self, capsys, tmp_path):
        _, out, _ = run(capsys, "embed", "--pomdp", TIGER, "--horizon", "3",
                        "--memo", "--out-dir", str(tmp_path))
        composite = pomdp.load_pomdp_json(TIGER)
        assert parsed_value(out) == pomdp.exact_value(composite, None, 3)

    def test_malformed_instance_exits_one(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"gamma": 0.9}', encoding="utf-8")
        code, _, _ = run(capsys, "embed", "--pomdp", str(bad),
                         "--horizon", "1", "--out-dir", str(tmp_path))
        assert code == 1


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, family_path):
    out = tmp_path_factory.mktemp("run")
    code = cli.main(["train", "--scenario", "single_mem", "--family",
                     family_path, "--cycles", "2", "--steps", "100",
                     "--hidden", "4", "--seed", "3", "--out-dir", str(out)])
    assert code == 0
    return out


class TestTrainVerb:
    def test_outputs(self, run_dir, capsys):
        for name in ("config.json", "bench.csv", "curves.csv", "final.ckpt",
                     "final.ckpt.json"):
            assert (run_dir / name).exists(), name
        doc = json.loads((run_dir / "config.json").read_text())
        assert doc["verb"] == "train"
        assert doc["scenario"] == "single_mem"
        assert doc["family"]["kmax"] == 4

    def test_final_mean_return_line(self, capsys, family_path, tmp_path):
        code, out, _ = run(capsys, "train", "--scenario", "single_nomem",
                           "--family", family_path, "--cycles", "1",
                           "--steps", "100", "--hidden", "4",
                           "--out-dir", str(tmp_path))
        assert code == 0
        assert re.search(r"final_mean_return=[-+0-9.e]+", out)

    def test_config_rerun_reproduces(self, run_dir, capsys, tmp_path):
        code, _, _ = run(capsys, "train", "--config",
                         str(run_dir / "config.json"),
                         "--out-dir", str(tmp_path))
        assert code == 0
        assert (tmp_path / "config.json").read_bytes() == \
            (run_dir / "config.json").read_bytes()
        assert (tmp_path / "curves.csv").read_bytes() == \
            (run_dir / "curves.csv").read_bytes()
        assert (tmp_path / "final.ckpt").read_bytes() == \
            (run_dir / "final.ckpt").read_bytes()

    def test_missing_scenario_exits_two(self, capsys, family_path):
        code, _, _ = run(capsys, "train", "--family", family_path)
        assert code == 2

    def test_missing_family_exits_two(self, capsys):
        code, _, _ = run(capsys, "train", "--scenario", "single_mem")
        assert code == 2

    def test_unknown_scenario_exits_two(self, capsys, family_path):
        code, _, _ = run(capsys, "train", "--scenario", "warp", "--family",
                         family_path)
        assert code == 2


class TestBenchVerb:
    def test_bench_summary_lines(self, capsys, family_path, tmp_path):
        code, out, _ = run(capsys, "bench", "--family", family_path,
                           "--scenarios", "single_nomem,single_mem",
                           "--cycles", "2", "--steps", "100", "--hidden",
                           "4", "--seed", "1", "--out-dir", str(tmp_path))
        assert code == 0
        assert re.search(r"scaling_fit slope=\S+ intercept=\S+ r2=\S+", out)
        assert re.search(r"memory_overhead ratio=\d+\.\d+", out)
        assert (tmp_path / "bench.csv").exists()
        with open(tmp_path / "bench.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {r["scenario"] for r in rows} >= \
            {"multi_mem_n1", "multi_mem_n8"}

    def test_no_overhead_line_without_both_singles(self, capsys, family_path,
                                                   tmp_path):
        code, out, _ = run(capsys, "bench", "--family", family_path,
                           "--scenarios", "single_mem", "--cycles", "2",
                           "--steps", "100", "--hidden", "4",
                           "--out-dir", str(tmp_path))
        assert code == 0
        assert "memory_overhead" not in out

    def test_missing_family_exits_two(self, capsys):
        code, _, _ = run(capsys, "bench")
        assert code == 2


class TestEvalVerb:
    def test_eval_writes_csv_and_summary(self, capsys, family_path, tmp_path):
        train_dir = tmp_path / "t"
        cli.main(["train", "--scenario", "single_mem", "--family",
                  family_path, "--cycles", "1", "--steps", "100",
                  "--hidden", "4", "--out-dir", str(train_dir)])
        capsys.readouterr()
        code, out, _ = run(capsys, "eval", "--checkpoint",
                           str(train_dir / "final.ckpt"), "--family",
                           family_path, "--split", "eval", "--episodes", "2",
                           "--out-dir", str(tmp_path))
        assert code == 0
        manifest = env.FamilyManifest.load(family_path)
        assert len(re.findall(r"J morphology=\d+ mean_return=", out)) == \
            len(manifest.eval_masks)
        assert re.search(r"J_avg=[-+0-9.e]+", out)
        lines = (tmp_path / "eval.csv").read_text().splitlines()
        assert lines[0] == "morphology_id,episodes,mean_return"
        assert len(lines) == 1 + len(manifest.eval_masks)

    def test_uniform_checkpoint_matches_direct_rollout(self, capsys,
                                                       family_path, tmp_path):
        manifest = env.FamilyManifest.load(family_path)
        p = init_policy("recurrent", obs_alphabet=env.N_OUTCOMES,
                        n_actions=manifest.kmax + 1, hidden_width=4, seed=0)
        p.set_theta(np.zeros_like(p.theta), bump_version=False)
        ckpt = tmp_path / "uniform.ckpt"
        save_checkpoint(p, ckpt)
        rows, average = cli.eval_policy(ckpt, manifest, "eval", 3, seed=2)
        mdps = env.compile_family(manifest, "eval")
        assert [r[0] for r in rows] == [m.morphology_id for m in mdps]
        # same seed derivation, same policy: the library path must agree
        rows2, average2 = cli.eval_policy(ckpt, manifest, "eval", 3, seed=2)
        assert rows == rows2 and average == average2

    def test_incompatible_checkpoint_exits_one(self, capsys, family_path,
                                               tmp_path):
        p = init_policy("recurrent", obs_alphabet=env.N_OUTCOMES,
                        n_actions=3, hidden_width=4, seed=0)
        ckpt = tmp_path / "narrow.ckpt"
        save_checkpoint(p, ckpt)
        code, _, err = run(capsys, "eval", "--checkpoint", str(ckpt),
                           "--family", family_path, "--out-dir",
                           str(tmp_path))
        assert code == 1
        assert "actions" in err


class TestDecPomdpVerbs:
    def test_solve_meetsignal(self, capsys, tmp_path):
        code, out, _ = run(capsys, "decpomdp-solve", "--instance", MEETSIGNAL,
                           "--horizon", "1", "--out-dir", str(tmp_path))
        assert code == 0
        assert parsed_value(out) == pytest.approx(0.64, abs=1e-9)

    def test_solve_json_includes_policy(self, capsys, tmp_path):
        code, out, _ = run(capsys, "decpomdp-solve", "--instance", MEETSIGNAL,
                           "--horizon", "1", "--json",
                           "--out-dir", str(tmp_path))
        assert code == 0
        doc = json.loads(out)
        assert doc["policy"] == [[0, 1], [0, 1]]  # both follow their obs

    def test_cap_exceeded_exits_one(self, capsys, tmp_path):
        code, _, err = run(capsys, "decpomdp-solve", "--instance", MEETSIGNAL,
                           "--horizon", "2", "--cap", "10",
                           "--out-dir", str(tmp_path))
        assert code == 1
        assert "4096" in err

    def test_train_writes_curve(self, capsys, tmp_path):
        code, out, _ = run(capsys, "decpomdp-train", "--instance", MEETSIGNAL,
                           "--episodes", "300", "--lr", "0.2", "--seed", "0",
                           "--out-dir", str(tmp_path))
        assert code == 0
        assert re.search(r"final_value=[-+0-9.e]+", out)
        lines = (tmp_path / "curve.csv").read_text().splitlines()
        assert lines[0] == "episode,shared_return,agent_count,message_bits"
        assert len(lines) == 301
        doc = json.loads((tmp_path / "config.json").read_text())
        assert doc["verb"] == "decpomdp-train"
        assert doc["episodes"] == 300

    def test_train_deterministic_per_seed(self, capsys, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        base = ["decpomdp-train", "--instance", MEETSIGNAL, "--episodes",
                "100", "--seed", "4"]
        run(capsys, *base, "--out-dir", str(a))
        run(capsys, *base, "--out-dir", str(b))
        assert (a / "curve.csv").read_bytes() == (b / "curve.csv").read_bytes()

    def test_bad_message_bits_exits_two(self, capsys):
        code, _, _ = run(capsys, "decpomdp-train", "--instance", MEETSIGNAL,
                         "--message-bits", "3")
        assert code == 2


class TestTopLevel:
    def test_unknown_verb_exits_two(self, capsys):
        assert cli.main(["transmogrify"]) == 2
        capsys.readouterr()

    def test_no_verb_exits_two(self, capsys):
        assert cli.main([]) == 2
        capsys.readouterr()

    def test_help_exits_zero(self, capsys):
        assert cli.main(["--help"]) == 0
        out = capsys.readouterr().out
        assert "solve-exact" in out and "decpomdp-train" in out

    def test_log_env_var_is_harmless(self, capsys, family_path, tmp_path,
                                     monkeypatch):
        monkeypatch.setenv("HEAT_LOG", "debug")
        code, _, _ = run(capsys, "solve-exact", "--family", family_path,
                         "--morphs", "0", "--horizon", "1",
                         "--out-dir", str(tmp_path))
        assert code == 0

    def test_every_verb_echoes_config(self, capsys, family_path, tmp_path):
        run(capsys, "solve-exact", "--family", family_path, "--morphs", "0",
            "--horizon", "1", "--out-dir", str(tmp_path))
        doc = json.loads((tmp_path / "config.json").read_text())
        assert doc["verb"] == "solve-exact"
        assert doc["horizon"] == 1
