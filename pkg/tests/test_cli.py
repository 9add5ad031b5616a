import json

import pytest

from calmsim import cli, kmer
from calmsim.cli import RunConfig


@pytest.fixture()
def corpus_file(tmp_path, small_corpus):
    path = tmp_path / "corpus.txt"
    path.write_text(small_corpus)
    return str(path)


def test_run_kmer_a_matches_oracle(corpus_file, small_corpus):
    code, report = cli.run(RunConfig(workload="kmer_a", input=corpus_file,
                                     workers=3, seed=1, dup_prob=0.3))
    assert code == 0 and report["match"]
    assert report["result"]["counts"] == kmer.oracle_count(small_corpus, 4)
    assert report["messages"] > 0 and report["ticks"] > 0


def test_run_lattice_demo():
    code, report = cli.run(RunConfig(workload="lattice_demo"))
    assert code == 0 and report["match"]


def test_run_cms_design2(corpus_file):
    code, report = cli.run(RunConfig(workload="cms_design2", input=corpus_file,
                                     k=5, workers=2, eps=0.05, delta=0.1))
    assert code == 0
    assert report["coordination"]["replicas_converged"]


def test_run_cms_design1_counts_gathers(corpus_file):
    code, report = cli.run(RunConfig(workload="cms_design1", input=corpus_file,
                                     k=5, workers=3, eps=0.05, delta=0.1))
    assert code == 0
    assert report["coordination"]["gather_messages"] > 0


def test_unknown_workload_exits_2():
    code, report = cli.run(RunConfig(workload="bogus"))
    assert code == 2 and "error" in report


def test_missing_input_exits_2():
    code, _ = cli.run(RunConfig(workload="kmer_a", input=None))
    assert code == 2


def test_unreadable_input_exits_2(tmp_path):
    code, _ = cli.run(RunConfig(workload="kmer_a",
                                input=str(tmp_path / "nope.txt")))
    assert code == 2


def test_divergence_exits_3(corpus_file, monkeypatch):
    def stuck_run(*a, **kw):
        raise cli.DivergenceError("tick cap exceeded")

    monkeypatch.setattr(kmer, "impl_a_run", stuck_run)
    code, report = cli.run(RunConfig(workload="kmer_a", input=corpus_file))
    assert code == 3 and "error" in report


def test_dropped_windows_exit_1(corpus_file, monkeypatch):
    real = kmer.chunk_windows

    def lossy(data, chunk, k):
        if chunk.start == 0:
            return []
        return real(data, chunk, k)

    monkeypatch.setattr(kmer, "chunk_windows", lossy)
    code, report = cli.run(RunConfig(workload="kmer_a", input=corpus_file,
                                     workers=2))
    assert code == 1 and not report["match"]


def test_main_malformed_flag_exits_2(corpus_file, capsys):
    code = cli.main(["run", "--workload", "kmer_a", "--input", corpus_file,
                     "--fail", "notanumber"])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_main_run_and_flag_parsing(corpus_file, capsys):
    code = cli.main([
        "run", "--workload", "kmer_table", "--input", corpus_file,
        "--workers", "4", "--seed", "2", "--dup-prob", "0.5",
        "--fail", "5:1", "--join", "7",
    ])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["config"]["fail"] == [[5, 1]]
    assert report["config"]["join"] == [7]
    assert report["coordination"]["plan_coordination_free"]


def test_config_file_with_flag_override(tmp_path, corpus_file, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "workload = kmer_b\n"
        f"input = {corpus_file}\n"
        "workers = 2\n"
        "threshold = 3   # guard value\n"
        "dup-prob = 0.2\n"
    )
    code = cli.main(["run", "--config", str(cfg), "--workers", "4"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["config"]["workers"] == 4  # flag beats file
    assert report["config"]["threshold"] == 3
    assert report["config"]["dup_prob"] == 0.2


def test_config_file_unknown_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("wrokload = kmer_a\n")
    assert cli.main(["run", "--config", str(cfg)]) == 2


def test_report_and_event_files_deterministic(tmp_path, corpus_file):
    rep = tmp_path / "report.json"
    ev = tmp_path / "events.log"

    def one_run():
        config = RunConfig(workload="kmer_a", input=corpus_file, workers=3,
                           seed=9, dup_prob=0.3, reorder_window=4,
                           drop_prob=0.1, report=str(rep),
                           emit_events=str(ev))
        assert cli.run(config)[0] == 0
        return rep.read_bytes(), ev.read_bytes()

    assert one_run() == one_run()


def test_event_log_format(tmp_path, corpus_file):
    ev = tmp_path / "events.log"
    cli.run(RunConfig(workload="kmer_a", input=corpus_file, workers=2,
                      emit_events=str(ev)))
    lines = ev.read_text().splitlines()
    assert lines
    kinds = set()
    for line in lines:
        tick, kind, *_ = line.split(",")
        int(tick)
        kinds.add(kind)
    assert {"send", "deliver", "assign", "complete"} <= kinds


def test_verify_identical_across_seeds(corpus_file, capsys):
    code = cli.main(["verify", "--workload", "kmer_a", "--input", corpus_file,
                     "--workers", "3", "--dup-prob", "0.3",
                     "--drop-prob", "0.1", "--reorder-window", "3",
                     "--seeds", "1,2,3"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["identical"] and summary["all_match"]
    assert summary["diverging_seed"] is None


def test_verify_single_seed_rejected(corpus_file):
    code, report = cli.verify(
        RunConfig(workload="kmer_a", input=corpus_file), seeds=[1])
    assert code == 2 and "error" in report
