import json
from pathlib import Path

import pytest

from masd.cli import UsageError, main, parse_seeds
from masd.io.records import read_metrics, read_trajectories

ROOT = Path(__file__).resolve().parents[1]
TINY = ["--set", "train.actor_hidden=[8]", "--set", "train.critic_hidden=[8]",
        "--set", "train.disc_hidden=[8]", "--set", "train.batch_size=8",
        "--set", "train.disc_batch_size=8", "--set", "train.warmup=20",
        "--set", "train.eval_interval=2"]


def test_parse_seeds():
    assert parse_seeds("1,2, 3") == [1, 2, 3]
    for bad in ("", "a,b", "1,1"):
        with pytest.raises(UsageError):
            parse_seeds(bad)


def test_missing_seeds_and_bad_config_exit_2(tmp_path, capsys):
    assert main(["train", "--config", str(ROOT / "configs/spread.toml")]) == 2
    assert main(["train", "--config", str(ROOT / "configs/spread.toml"), "--seeds", "1",
                 "--set", "reward.betta=1", "--out", str(tmp_path)]) == 2
    assert "betta" in capsys.readouterr().err


def test_xor_runs_and_is_reproducible(tmp_path, capsys):
    args = ["xor", "--config", str(ROOT / "configs/xor.toml"), "--seeds", "1,2",
            "--set", "train.episodes=40", *TINY]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    out = capsys.readouterr().out
    assert "global MI" in out
    for s in (1, 2):
        a = (tmp_path / "a" / f"seed_{s}" / "metrics.jsonl").read_bytes()
        assert a == (tmp_path / "b" / f"seed_{s}" / "metrics.jsonl").read_bytes()
        assert "mi_global" in read_metrics(tmp_path / "a" / f"seed_{s}" / "metrics.jsonl")[-1]
    m1 = (tmp_path / "a" / "seed_1" / "metrics.jsonl").read_bytes()
    assert m1 != (tmp_path / "a" / "seed_2" / "metrics.jsonl").read_bytes()
    assert (tmp_path / "a" / "mi_curves.svg").exists()
    assert set(json.loads((tmp_path / "a" / "summary.json").read_text())) == {"1", "2"}


def _train(tmp_path, task, episodes, *extra):
    args = ["train", "--config", str(ROOT / f"configs/{task}.toml"), "--seeds", "3",
            "--set", f"train.episodes={episodes}", *TINY, *extra, "--out", str(tmp_path)]
    assert main(args) == 0
    return tmp_path / "seed_3"


def test_train_eval_analyze_pipeline(tmp_path):
    run = _train(tmp_path / "train", "spread", 6)
    rows = read_metrics(run / "metrics.jsonl")
    assert [r["episode"] for r in rows] == [2, 4, 6]
    assert all("mi_global" not in r for r in rows)
    ks = [r["active_k"] for r in rows]
    assert ks == sorted(ks)

    ev = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(run / "checkpoint.ckpt"), "--perturb", "2",
                 "--run-id", "spreadrun", "--out", str(ev)]) == 0
    recs = read_trajectories(ev / "trajectories.csv")
    assert len(recs) == 3 * 3  # 3 active skills x (fixed + 2 perturbed)
    assert (ev / "skills.svg").exists() and (ev / "initial_state.csv").exists()

    ev2 = tmp_path / "eval2"
    assert main(["eval", "--checkpoint", str(run / "checkpoint.ckpt"), "--perturb", "2",
                 "--run-id", "spreadrun", "--out", str(ev2)]) == 0
    assert (ev / "trajectories.csv").read_bytes() == (ev2 / "trajectories.csv").read_bytes()

    an = tmp_path / "an"
    assert main(["analyze", str(ev / "trajectories.csv"), "--out", str(an)]) == 0
    first = (an / "summary.json").read_bytes()
    assert "cluster_score" in json.loads(first)["spreadrun"]
    assert main(["analyze", str(ev / "trajectories.csv"), "--out", str(an)]) == 0
    assert (an / "summary.json").read_bytes() == first
    assert (an / "spreadrun_angles.svg").exists()


def test_rendezvous_grid_eval_gives_endpoint_std(tmp_path):
    run = _train(tmp_path / "train", "rendezvous", 4)
    rows = read_metrics(run / "metrics.jsonl")
    assert all("extrinsic_reward" in r and "pseudo_reward_mean" in r for r in rows)
    ev = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(run / "checkpoint.ckpt"), "--run-id", "rv",
                 "--out", str(ev)]) == 0
    assert len(read_trajectories(ev / "trajectories.csv")) == 3 * 16
    an = tmp_path / "an"
    assert main(["analyze", str(ev / "trajectories.csv"), "--out", str(an)]) == 0
    summary = json.loads((an / "summary.json").read_text())["rv"]
    assert len(summary["endpoint_std"]) == 3
    assert (an / "rv_endpoint_std.svg").exists()


def test_resume_continues_numbering(tmp_path):
    extra = ["--set", "train.checkpoint_interval=4"]
    full = _train(tmp_path / "full", "spread", 8, *extra)
    part = _train(tmp_path / "part", "spread", 8, *extra)
    resumed = tmp_path / "resumed"
    assert main(["train", "--resume", str(part / "checkpoint_ep4.ckpt"), "--out", str(resumed)]) == 0
    tail = read_metrics(resumed / "metrics.jsonl")
    assert [r["episode"] for r in tail] == [6, 8]
    assert tail == read_metrics(full / "metrics.jsonl")[-2:]


def test_finetune_both_modes(tmp_path):
    run = _train(tmp_path / "pre", "tag", 4)
    out = tmp_path / "ft"
    ckpt = str(tmp_path / "pre" / "seed_{seed}" / "checkpoint.ckpt")
    assert main(["finetune", "--config", str(ROOT / "configs/tag.toml"), "--seeds", "3",
                 "--checkpoint", ckpt, "--set", "finetune.episodes=3", "--set", "finetune.final_window=2",
                 *TINY, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["modes"]) == {"checkpoint", "random"} and summary["auxiliary"] is False
    for mode in ("checkpoint", "random"):
        data = json.loads((out / mode / "seed_3" / "returns.json").read_text())
        assert len(data["returns"]) == 3
    assert (out / "reward_curves.svg").exists()
    assert run.exists()


def test_missing_checkpoint_exit_1(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.ckpt"), "--out", str(tmp_path)]) == 1
    (tmp_path / "bad.ckpt").write_bytes(b"MASDCKPT garbage")
    assert main(["eval", "--checkpoint", str(tmp_path / "bad.ckpt"), "--out", str(tmp_path)]) == 1
