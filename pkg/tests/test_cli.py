import csv
import json

import pytest

from fedtrident import cli
from fedtrident.cli import ConfigError, parse_axis_values, parse_config

SMALL = """
num_clients = 12
clients_per_round = 6
rounds = 4
num_classes = 4
feature_dim = 5
hidden = 8
train_samples_per_class = 60
test_samples_per_class = 40
separation = 3.0
noise = 1
malicious_fraction = 0.25
seed = 2
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text(SMALL)
    return p


def write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_empty_file_gives_defaults(tmp_path):
    c = parse_config(write(tmp_path, ""))
    assert (c.num_clients, c.clients_per_round, c.rounds, c.alpha, c.train.learning_rate) == (100, 20, 60, 1.0, 0.03)
    assert c.policy.r_init == 0.8 and c.defense == "fedtrident"


def test_nested_tables_and_phases(tmp_path):
    c = parse_config(write(tmp_path, """
defense = "tmean"
attack_phases = [[1, 10, 3, 2], [11, 60, 3, 1]]
[train]
local_epochs = 2
[policy]
reward = 0.1
[baseline]
trim_fraction = 0.1
"""))
    assert c.train.local_epochs == 2 and c.policy.reward == 0.1 and c.baseline.trim_fraction == 0.1
    assert c.schedule().effective_flip(5) == (3, 2)


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="colour"):
        parse_config(write(tmp_path, "colour = 1"))
    with pytest.raises(ConfigError, match="train.speed"):
        parse_config(write(tmp_path, "[train]\nspeed = 1"))
    with pytest.raises(ConfigError, match="0.5"):
        parse_config(write(tmp_path, "malicious_fraction = 0.6"))
    with pytest.raises(ConfigError) as e:
        parse_config(write(tmp_path, 'defense = "unknown"'))
    for name in ("fedavg", "krum", "tmean", "median", "foolsgold", "flame", "fedtrident"):
        assert name in str(e.value)
    with pytest.raises(ConfigError, match="rounds"):
        parse_config(write(tmp_path, 'rounds = "many"'))
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, "rounds = = 3"))


def test_run_writes_outputs(small_cfg, tmp_path):
    out = tmp_path / "o"
    assert cli.main(["run", str(small_cfg), "--out", str(out), "--dump-trajectory"]) == 0
    with open(out / "rounds.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == cli.ROUND_COLUMNS and len(rows) == 5
    summary = json.loads((out / "summary.json").read_text())
    last = dict(zip(rows[0], rows[-1]))
    for k in ("SRE", "ASR", "GAC", "GAS"):
        assert summary["final"][k] == pytest.approx(float(last[k]), abs=1e-9)
    with open(out / "detection.csv", newline="") as fh:
        det = list(csv.reader(fh))
    assert tuple(det[0]) == cli.DETECTION_COLUMNS and len(det) == 5
    assert (out / "trajectory" / "round_0001").is_dir()
    raw = (out / "rounds.csv").read_bytes()
    assert b"\r" not in raw


def test_schema_is_stable_across_defenses(small_cfg, tmp_path):
    cli.main(["run", str(small_cfg), "--out", str(tmp_path / "a")])
    fedavg = write(tmp_path, SMALL + 'defense = "fedavg"\n', "fa.toml")
    cli.main(["run", str(fedavg), "--out", str(tmp_path / "b")])
    headers = []
    for d in ("a", "b"):
        with open(tmp_path / d / "rounds.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        headers.append(rows[0])
        assert all(len(r) == len(rows[0]) for r in rows)
    assert headers[0] == headers[1]
    with open(tmp_path / "b" / "rounds.csv", newline="") as fh:
        row = next(csv.DictReader(fh))
    assert row["f_prime"] == "" and row["revert"] == "0"


def test_run_is_byte_identical_and_seed_flag(small_cfg, tmp_path):
    for d in ("x", "y"):
        cli.main(["run", str(small_cfg), "--out", str(tmp_path / d)])
    assert (tmp_path / "x" / "rounds.csv").read_bytes() == (tmp_path / "y" / "rounds.csv").read_bytes()
    cli.main(["run", str(small_cfg), "--out", str(tmp_path / "z"), "--seed", "9"])
    assert json.loads((tmp_path / "z" / "summary.json").read_text())["config"]["seed"] == 9


def test_ablation_flags(small_cfg, tmp_path):
    cfgs = {}
    for stage in ("detection", "exclusion", "full"):
        out = tmp_path / stage
        assert cli.main(["run", str(small_cfg), "--out", str(out), "--ablation", stage]) == 0
        cfgs[stage] = json.loads((out / "summary.json").read_text())["config"]
    flags = {s: (c["enable_validation"], c["enable_exclusion"], c["enable_remediation"]) for s, c in cfgs.items()}
    assert flags == {"detection": (True, False, False), "exclusion": (True, True, False), "full": (True, True, True)}
    strip = [{k: v for k, v in c.items() if not k.startswith("enable_")} for c in cfgs.values()]
    assert strip[0] == strip[1] == strip[2]


def test_unwritable_output_dir(small_cfg, tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["run", str(small_cfg), "--out", str(blocker / "sub")]) != 0
    assert "error" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    assert cli.main(["run", str(write(tmp_path, "malicious_fraction = 0.6"))]) == 2
    assert "malicious_fraction" in capsys.readouterr().err


def test_sweep_axes(small_cfg, tmp_path):
    out = tmp_path / "s"
    assert cli.main(["sweep", str(small_cfg), "--axis", "malicious_fraction",
                     "--values", "0,0.1,0.2,0.3,0.4", "--out", str(out)]) == 0
    with open(out / "sweep.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == cli.SWEEP_COLUMNS and len(rows) == 6
    cfg = parse_config(small_cfg).replace(rounds=1)
    names = list(cli.DEFENSES)
    assert len(cli.sweep(cfg, "defense", parse_axis_values("defense", ",".join(names)))) == 7


def test_sweep_value_errors(small_cfg):
    with pytest.raises(ConfigError):
        parse_axis_values("alpha", "")
    with pytest.raises(ConfigError):
        parse_axis_values("alpha", "a,b")
    with pytest.raises(ConfigError, match="fedavg"):
        parse_axis_values("defense", "fedavg,bogus")
    with pytest.raises(ConfigError):
        parse_axis_values("rounds", "1")
    with pytest.raises(ConfigError):
        cli.sweep(parse_config(small_cfg), "alpha", [])
    assert cli.main(["sweep", str(small_cfg), "--axis", "alpha", "--values", ""]) == 2
