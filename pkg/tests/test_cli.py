import csv
import math
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

from fusiontrack.cli import RESULT_COLUMNS, SWEEP_COLUMNS, main, sweep_cells
from fusiontrack.config import ConfigError, ExperimentConfig

QUIET = "path.laps = 1\nwifi.noise_sigma_r = 0\nacoustic.noise_sigma_d = 0\n"


def _rows(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.reader(line for line in fh if not line.startswith("#")))


def _summary(path):
    rows = _rows(path)
    return dict(zip(rows[0], rows[1]))


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "quiet.cfg"
    cfg.write_text(QUIET)
    assert main(["simulate", "--config", str(cfg), "--out", str(root / "sim")]) == 0
    return root, cfg


def test_simulate_writes_files(sim):
    root, _ = sim
    out = root / "sim"
    truth = _rows(out / "truth.csv")
    feats = _rows(out / "features.csv")
    assert len(truth) == len(feats)
    assert feats[0] == ["t", "plcr_1", "plcr_2", "tdof", "amplitude", "confidence"]
    assert ExperimentConfig.load(out / "config.txt") == ExperimentConfig.parse(QUIET)


def test_feature_rows_match_duration(tmp_path):
    assert main(["simulate", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "features.csv")[1:]
    duration = float(rows[-1][0]) - float(rows[0][0])
    assert len(rows) == round(duration * 100) + 1


def test_nlos_header_tag(sim, tmp_path):
    _, cfg = sim
    assert main(["simulate", "--config", str(cfg), "--mode", "nlos", "--out",
                 str(tmp_path)]) == 0
    text = (tmp_path / "features.csv").read_text()
    assert text.startswith("#mode=nlos\n")
    assert "dplcr_1,dplcr_2" in text


def test_simulate_is_byte_identical(sim, tmp_path):
    root, cfg = sim
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    for name in ("truth.csv", "features.csv", "config.txt"):
        assert (tmp_path / name).read_bytes() == (root / "sim" / name).read_bytes()


def test_track_fusion_and_baseline(sim, tmp_path):
    root, cfg = sim
    feats = str(root / "sim" / "features.csv")
    truth = _rows(root / "sim" / "truth.csv")
    start = f"{truth[1][1]},{truth[1][2]}"
    for method in ("fusion", "baseline"):
        assert main(["track", feats, "--config", str(cfg), "--method", method, "--init", start,
                     "--out", str(tmp_path)]) == 0
    result = _rows(tmp_path / "result_fusion.csv")
    assert result[0] == RESULT_COLUMNS and len(result) == len(truth)
    assert (tmp_path / "result_fusion.csv").read_text().startswith("#method=fusion\n")
    summary = _summary(tmp_path / "summary_fusion.csv")
    assert float(summary["median_m"]) <= 0.05


def test_track_requires_start(sim, tmp_path, capsys):
    root, cfg = sim
    code = main(["track", str(root / "sim" / "features.csv"), "--config", str(cfg),
                 "--out", str(tmp_path)])
    assert code == 1
    assert "initial position" in capsys.readouterr().err


def test_track_search_within_one_cell(sim, tmp_path):
    root, cfg = sim
    assert main(["track", str(root / "sim" / "features.csv"), "--config", str(cfg),
                 "--search", "--out", str(tmp_path)]) == 0
    head = (tmp_path / "summary_fusion.csv").read_text().splitlines()
    x, y = map(float, head[0].split("=", 1)[1].split(","))
    assert head[1].startswith("#search_margin=")
    truth = _rows(root / "sim" / "truth.csv")[1]
    assert math.dist((x, y), (float(truth[1]), float(truth[2]))) <= 0.25 * math.sqrt(2)
    assert (tmp_path / "search_fusion.csv").exists()


def test_search_command(sim, tmp_path):
    root, cfg = sim
    assert main(["search", str(root / "sim" / "features.csv"), "--config", str(cfg),
                 "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "search.csv")
    assert rows[0] == ["cand_x", "cand_y", "loss"] and len(rows) == 1 + 21 * 21


def test_evaluate_outputs(sim, tmp_path):
    root, cfg = sim
    feats = str(root / "sim" / "features.csv")
    truth = root / "sim" / "truth.csv"
    first = _rows(truth)[1]
    for method in ("fusion", "baseline"):
        main(["track", feats, "--config", str(cfg), "--method", method,
              "--init", f"{first[1]},{first[2]}", "--out", str(tmp_path / "r")])
    results = [str(tmp_path / "r" / f"result_{m}.csv") for m in ("fusion", "baseline")]
    assert main(["evaluate", *results, "--truth", str(truth), "--out",
                 str(tmp_path / "e")]) == 0
    out = tmp_path / "e"
    assert [r[0] for r in _rows(out / "summary.csv")[1:]] == ["fusion", "baseline"]
    comparison = _rows(out / "comparison.csv")
    assert comparison[0] == ["method", "versus", "reduction_pct"] and len(comparison) == 3
    assert len(_rows(out / "cdf.csv")) == 102
    for name in ("trajectories.svg", "cdf.svg"):
        root_el = ET.fromstring((out / name).read_text())
        assert root_el.tag.endswith("svg")


def test_evaluate_identical_is_flat_zero(sim, tmp_path):
    root, _ = sim
    truth = _rows(root / "sim" / "truth.csv")
    lines = ["#method=truth", ",".join(RESULT_COLUMNS)]
    for r in truth[1:]:
        lines.append(",".join([r[0], r[1], r[2], r[1], r[2], "0", "", "", "", "0"]))
    res = tmp_path / "result_truth.csv"
    res.write_text("\n".join(lines) + "\n")
    assert main(["evaluate", str(res), "--truth", str(root / "sim" / "truth.csv"),
                 "--out", str(tmp_path / "e")]) == 0
    assert all(float(r[1]) == 0.0 for r in _rows(tmp_path / "e" / "cdf.csv")[1:])


def test_evaluate_misaligned_fails(sim, tmp_path):
    root, _ = sim
    res = tmp_path / "result_x.csv"
    res.write_text(",".join(RESULT_COLUMNS) + "\n0.0,0,0,1,1,0,,,,0\n")
    assert main(["evaluate", str(res), "--truth", str(root / "sim" / "truth.csv"),
                 "--out", str(tmp_path)]) == 1


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("path.size = -1\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert main(["simulate", "--config", str(tmp_path / "nope.cfg"), "--out",
                 str(tmp_path)]) == 1
    assert main(["track", str(tmp_path / "nope.csv"), "--init", "1,1", "--out",
                 str(tmp_path)]) == 1
    with pytest.raises(SystemExit) as info:
        main(["simulate"])
    assert info.value.code == 1


def test_sweep_cells_and_empty_sweep():
    cfg = ExperimentConfig().with_values(seed=10, sweep__values=("1", "2"), sweep__repeats=3)
    cells = sweep_cells(cfg)
    assert [c[0] for c in cells] == list(range(6))
    assert [c[2].seed for c in cells] == list(range(10, 16))
    assert [c[2].layout__links for c in cells] == [1, 1, 1, 2, 2, 2]
    with pytest.raises(ConfigError):
        sweep_cells(cfg.with_values(sweep__values=()))


def test_sweep_command(sim, tmp_path):
    _, cfg = sim
    assert main(["sweep", "--config", str(cfg), "--param", "links", "--values", "1,2",
                 "--repeats", "2", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "sweep.csv")
    assert rows[0] == SWEEP_COLUMNS and len(rows) == 5
    assert all(r[-1] == "ok" for r in rows[1:])
    assert len(_rows(tmp_path / "sweep_summary.csv")) == 3
    assert main(["sweep", "--config", str(cfg), "--values", ",", "--out",
                 str(tmp_path / "x")]) == 1
