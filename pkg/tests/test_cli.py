import numpy as np
import pytest

from sirobust.cli import main
from sirobust.config import ConfigError, load_data, number, number_list, parse_config, parse_data_spec
from sirobust.datasets import write_idx
from sirobust.defenses import Method
from sirobust.model import Checkpoint
from sirobust.report import ExperimentReport, config_hash

DATA = "moons:n=120,noise=0.1,seed=0"
TINY = """
[model]
hidden = 16
[defense]
method = TRADES
si = true
beta = 0.3
[inner_attack]
epsilon = 20/255
steps = 3
[optimizer]
lr = 0.1
epochs = 3
milestones = 2
batch_size = 64
"""


# ---- config


def test_number_accepts_fractions():
    assert number("8/255") == 8 / 255
    assert number(" 0.25 ") == 0.25
    assert number_list("1e-3, 1, 10") == [1e-3, 1.0, 10.0]
    with pytest.raises(ConfigError):
        number("eight")
    with pytest.raises(ConfigError):
        number("1/0")


def test_parse_config_fields():
    cfg = parse_config(TINY + "[grid]\ns = 10,15\n")
    d = cfg.defense
    assert d.method == Method.TRADES and d.si and d.beta == 0.3
    assert d.inner_attack.epsilon == 20 / 255 and d.inner_attack.steps == 3
    assert d.optimizer.milestones == (2,) and d.optimizer.epochs == 3
    assert cfg.hidden == (16,)
    assert cfg.grid == {"s": [10.0, 15.0]}


def test_parse_config_defaults():
    cfg = parse_config("")
    assert cfg.defense.method == Method.AT and not cfg.defense.si
    assert cfg.defense.inner_attack.steps == 10
    assert cfg.eval_epsilon == 8 / 255


@pytest.mark.parametrize("text", ["[bogus]\nx=1\n", "[defense]\nsi = maybe\n", "[defense]\nbeta = -1\n",
                                  "[grid]\ngamma = 1\n"])
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_data_specs(tmp_path):
    assert parse_data_spec("moons:n=5,noise=0") == ("moons", {"n": "5", "noise": "0"})
    a = load_data("moons:n=50,seed=3")
    b = load_data("moons:n=50,seed=3", seed_offset=1)
    assert a.provenance["seed"] == 3 and b.provenance["seed"] == 4
    blobs = load_data("blobs:n=40,k=5,sd=0.01,seed=0")
    assert blobs.num_classes == 5
    write_idx(tmp_path / "i.idx", np.zeros((3, 4, 4)))
    write_idx(tmp_path / "l.idx", np.array([0, 1, 2]))
    idx = load_data(f"idx:images={tmp_path / 'i.idx'},labels={tmp_path / 'l.idx'},n=2")
    assert idx.inputs.shape == (2, 1, 4, 4)
    with pytest.raises(ConfigError):
        load_data("cifar:n=1")
    with pytest.raises(ConfigError):
        load_data("moons:n")


# ---- report


def test_csv_metadata_and_timing(tmp_path):
    rep = ExperimentReport(["a", "wall_time"], metadata={"z": 1, "b": "x"})
    rep.add(a=0.5, wall_time=1.23)
    text = rep.to_csv()
    assert text == "# b=x\n# z=1\na\n0.5\n"
    assert "wall_time" in rep.to_csv(timing=True)
    rep.to_csv(tmp_path / "r.csv")
    back = ExperimentReport.read_csv(tmp_path / "r.csv")
    assert back.columns == ["a"] and back.rows == [{"a": "0.5"}] and back.metadata["z"] == "1"
    with pytest.raises(ValueError):
        rep.add(a=1.0)


def test_config_hash_is_stable():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 16


# ---- commands


def read(path):
    lines = path.read_text().splitlines()
    meta = [l for l in lines if l.startswith("#")]
    body = [l for l in lines if not l.startswith("#")]
    return meta, body


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.ini").write_text(TINY)
    assert main(["train", "--config", str(root / "tiny.ini"), "--data", DATA, "--out", str(root)]) == 0
    return root


def test_train_outputs(trained):
    ckpt = Checkpoint.load(trained / "model.ckpt")
    assert ckpt.metadata["defense"] == "TRADES-SI" and ckpt.metadata["epoch"] == 3
    meta, body = read(trained / "train_log.csv")
    assert any(l.startswith("# config_hash=") for l in meta)
    assert body[0].split(",")[:4] == ["epoch", "lr", "clean_acc", "robust_acc"]
    assert "wall_time" not in body[0]
    assert len(body) == 1 + 3


@pytest.mark.parametrize("kind", ["pgd", "pgdcw", "sipgd", "spsa"])
def test_attack_command(trained, kind, tmp_path):
    args = ["attack", "--ckpt", str(trained / "model.ckpt"), "--data", DATA, "--attack", kind,
            "--eps", "0.05", "--steps", "3", "--out", str(tmp_path)]
    if kind == "spsa":
        args += ["--spsa-samples", "8"]
    assert main(args) == 0
    meta, body = read(tmp_path / "attack.csv")
    assert body[0] == "attack,loss,epsilon,steps,restarts,seed,clean_acc,robust_acc,mean_loss"
    assert len(body) == 2


def test_attack_dlr_needs_three_classes(trained, tmp_path, capsys):
    code = main(["attack", "--ckpt", str(trained / "model.ckpt"), "--data", DATA, "--attack", "pgdlr",
                 "--eps", "0.05", "--steps", "2", "--out", str(tmp_path)])
    err = capsys.readouterr().err.strip().splitlines()
    assert code == 1 and len(err) == 1 and err[0].startswith("error: ValueError:")


def test_report_command(trained, tmp_path):
    assert main(["report", "--ckpt", str(trained / "model.ckpt"), "--data", DATA, "--eps", "0.05",
                 "--steps", "3", "--restarts", "2", "--out", str(tmp_path)]) == 0
    rep = ExperimentReport.read_csv(tmp_path / "report.csv")
    assert rep.column("attack") == ["PGD", "PGDCW", "SI-PGD"] * 2
    assert rep.column("restarts") == ["1"] * 3 + ["2"] * 3
    one, two = rep.rows[:3], rep.rows[3:]
    assert all(float(b["robust_acc"]) <= float(a["robust_acc"]) for a, b in zip(one, two))


def test_sweep_surface_histogram_commands(trained, tmp_path):
    ck = str(trained / "model.ckpt")
    common = ["--ckpt", ck, "--data", DATA, "--eps", "0.05", "--out", str(tmp_path)]
    assert main(["sweep-scale", *common, "--steps", "3", "--factors", "1e-2,1,1e2"]) == 0
    rep = ExperimentReport.read_csv(tmp_path / "sweep_scale.csv")
    assert len(rep) == 6 and rep.columns == ["alpha", "attack", "clean_acc", "robust_acc"]

    assert main(["surface", *common, "--mode", "example", "--resolution", "5", "--index", "2"]) == 0
    rep = ExperimentReport.read_csv(tmp_path / "surface_example.csv")
    assert len(rep) == 25 and rep.columns == ["delta1", "delta2", "loss"]

    assert main(["surface", *common, "--mode", "weight", "--resolution", "3", "--n-eval", "20"]) == 0
    assert len(ExperimentReport.read_csv(tmp_path / "surface_weight.csv")) == 3

    assert main(["histogram", *common, "--bins", "10"]) == 0
    rep = ExperimentReport.read_csv(tmp_path / "histogram.csv")
    assert sum(int(c) for c in rep.column("count")) == 120


def test_ablate_command(tmp_path):
    (tmp_path / "grid.ini").write_text(TINY + "[eval]\nepsilon = 0.05\nsteps = 2\n[grid]\ns = 10, 20\n")
    assert main(["ablate", "--grid", str(tmp_path / "grid.ini"), "--data", "moons:n=60,seed=0",
                 "--out", str(tmp_path)]) == 0
    rep = ExperimentReport.read_csv(tmp_path / "ablate.csv")
    assert rep.column("s") == ["10.0", "20.0"] and rep.column("m") == ["0.2", "0.2"]


def test_timing_flag_adds_wall_time(trained, tmp_path):
    assert main(["attack", "--ckpt", str(trained / "model.ckpt"), "--data", DATA, "--eps", "0.05",
                 "--steps", "2", "--out", str(tmp_path), "--timing"]) == 0
    assert read(tmp_path / "attack.csv")[1][0].endswith(",wall_time")


@pytest.mark.parametrize("argv,kind", [
    (["attack", "--ckpt", "/nonexistent/model.ckpt"], "FileNotFoundError"),
    (["train", "--config", "/nonexistent.ini"], "ConfigError"),
    (["train", "--data", "cifar:n=3"], "ConfigError"),
    (["sweep-scale", "--ckpt", "CKPT", "--factors", "1,-1"], "ValueError"),
    (["surface", "--ckpt", "CKPT", "--resolution", "2"], "ValueError"),
])
def test_errors_are_one_line(argv, kind, trained, capsys, tmp_path):
    argv = [str(trained / "model.ckpt") if a == "CKPT" else a for a in argv] + ["--out", str(tmp_path)]
    assert main(argv) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith(f"error: {kind}:")


def test_corrupt_checkpoint_is_reported(tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    assert main(["attack", "--ckpt", str(bad), "--out", str(tmp_path)]) == 1
    assert capsys.readouterr().err.startswith("error: CheckpointError:")


def test_usage_errors_exit_nonzero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["attack", "--attack", "fgsm", "--ckpt", "x"])
    assert exc.value.code != 0
