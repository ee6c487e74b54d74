"""End-to-end checks of the uaflow command-line tool.

Run with UAFLOW_BIN pointing at the built binary (ctest sets it).
"""

import csv
import json
import math
import os
import struct
import subprocess
import time
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[2]
BIN = os.environ.get("UAFLOW_BIN", str(ROOT / "build" / "uaflow"))
SVG = "{http://www.w3.org/2000/svg}"

SMOKE = (ROOT / "configs" / "smoke.yaml").read_text()
UNCOND = SMOKE.replace("labeled: true", "labeled: false")


def run(*args, env=None, check=True):
    full_env = dict(os.environ)
    full_env.update(env or {})
    p = subprocess.run([BIN, *map(str, args)], capture_output=True, text=True, env=full_env)
    if check and p.returncode != 0:
        raise AssertionError(f"{args} exited {p.returncode}: {p.stderr}")
    return p


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "smoke.yaml").write_text(SMOKE)
    (d / "uncond.yaml").write_text(UNCOND)
    start = time.monotonic()
    run("train", "--config", d / "smoke.yaml", "--out", d / "train", "--quiet")
    d.joinpath("smoke_seconds").write_text(str(time.monotonic() - start))
    run("train", "--config", d / "uncond.yaml", "--out", d / "uncond", "--quiet")
    return d


def sample(work, out, *flags, env=None, check=True, ckpt="train"):
    return run("sample", "--checkpoint", work / ckpt / "model.ckpt", "--out", work / out, "--n", 40,
               "--steps", 20, *flags, env=env, check=check)


def test_smoke_training_is_fast_and_complete(work):
    assert float((work / "smoke_seconds").read_text()) < 60.0
    rows = list(csv.reader((work / "train" / "loss.csv").open()))
    assert rows[0] == ["step", "total", "nll_term", "correction_term"]
    assert len(rows) == 501
    manifest = json.loads((work / "train" / "manifest.json").read_text())
    for name in manifest["files"].values():
        assert (work / "train" / name).exists()


def test_training_is_reproducible(work):
    run("train", "--config", work / "smoke.yaml", "--out", work / "train2", "--quiet")
    for name in ("loss.csv", "model.ckpt"):
        assert (work / "train" / name).read_bytes() == (work / "train2" / name).read_bytes()


def test_missing_dataset_section(work):
    bad = work / "bad.yaml"
    bad.write_text("seed: 1\ntrain:\n  steps: 10\n")
    p = run("train", "--config", bad, "--out", work / "bad", check=False)
    assert p.returncode == 2
    assert "dataset: required section missing" in p.stderr


def test_nonfinite_weights_are_a_numeric_failure(work):
    raw = (work / "train" / "model.ckpt").read_bytes()
    header_len = struct.unpack_from("<Q", raw, 12)[0]
    start = 20 + header_len
    count = (len(raw) - start) // 8
    (work / "nan").mkdir(exist_ok=True)
    (work / "nan" / "model.ckpt").write_bytes(raw[:start] + struct.pack(f"<{count}d", *([math.nan] * count)))
    p = sample(work, "nan_out", check=False, ckpt="nan")
    assert p.returncode == 3, p.stderr
    assert "numeric failure" in p.stderr


def test_sampling_reproducible_across_thread_counts(work):
    sample(work, "s1", "--class", "cycle", "--lambda-max", 5, "--w", 10, env={"UAFLOW_THREADS": "1"})
    sample(work, "s2", "--class", "cycle", "--lambda-max", 5, "--w", 10, env={"UAFLOW_THREADS": "3"})
    for name in ("samples.csv", "uncertainty.csv", "lambda.csv", "sigma_correlation.csv"):
        assert (work / "s1" / name).read_bytes() == (work / "s2" / name).read_bytes(), name
    manifest = json.loads((work / "s1" / "manifest.json").read_text())
    assert manifest["threads"] == 1
    for rec in manifest["records"]:
        assert rec["seed"] == 0 ^ rec["index"]
        for key in ("uncertainty_map", "lambda_trace"):
            assert (work / "s1" / rec[key]).exists()
    for name in manifest["files"].values():
        assert (work / "s1" / name).exists()


def test_zero_guidance_is_vanilla(work):
    sample(work, "vanilla", "--class", 2)
    sample(work, "zero", "--class", 2, "--w", 0, "--lambda-max", 0)
    for name in ("samples.csv", "uncertainty.csv"):
        assert (work / "vanilla" / name).read_bytes() == (work / "zero" / name).read_bytes(), name


def test_incompatible_flags(work):
    for flags in (["--lambda-max", 2], ["--fixed-lambda", 0.5], ["--class", 1]):
        p = sample(work, "rej", *flags, check=False, ckpt="uncond")
        assert p.returncode == 2, flags
    for flags in (["--fixed-lambda", 1, "--lambda-max", 1, "--class", 0], ["--cov", "zero", "--probes", 4],
                  ["--score", "au", "--cov", "mc"], ["--renoise", 4], ["--method", "rk4"]):
        assert sample(work, "rej", *flags, check=False).returncode == 2, flags


def test_eval_outputs(work):
    sample(work, "ev", "--class", "cycle")
    run("eval", "--manifest", work / "ev" / "manifest.json", "--out", work / "eval", "--real-n", 500,
        "--ratios", "0,0.1,0.2,0.3,0.4,0.5")
    rows = list(csv.reader((work / "eval" / "eval.csv").open()))
    assert rows[0] == ["ratio", "precision", "recall", "energy_distance", "retained"]
    assert [float(r[0]) for r in rows[1:]] == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    assert [int(r[4]) for r in rows[1:]] == [40, 36, 32, 28, 24, 20]
    root = ET.parse(work / "eval" / "filtering.svg").getroot()
    curves = root.findall(f".//{SVG}polyline")
    assert sorted(c.get("data-name") for c in curves) == ["energy_distance", "precision", "recall"]
    ET.parse(work / "ev" / "samples.svg")
    ET.parse(work / "train" / "loss.svg")


def test_eval_with_real_csv_and_data_export(work):
    run("data", "--config", work / "smoke.yaml", "--out", work / "real.csv", "--n", 300)
    rows = list(csv.reader((work / "real.csv").open()))
    assert rows[0] == ["index", "label", "x0", "x1"]
    assert len(rows) == 301
    run("eval", "--manifest", work / "ev" / "manifest.json", "--out", work / "eval_real", "--real", work / "real.csv")
    assert (work / "eval_real" / "eval.csv").exists()


def test_empty_manifest_rejected(work):
    m = work / "empty.json"
    m.write_text(json.dumps({"command": "sample", "records": []}))
    p = run("eval", "--manifest", m, "--out", work / "e", check=False)
    assert p.returncode == 2
    assert "empty" in p.stderr


def test_guidance_sweep_grid(work):
    env = dict(os.environ, UAFLOW=BIN, SWEEP_N="12")
    subprocess.run([str(ROOT / "tools" / "guidance_sweep.sh"), str(work / "train" / "model.ckpt"),
                    str(work / "sweep"), "--steps", "6"], check=True, env=env, capture_output=True)
    manifests = sorted((work / "sweep").glob("*/manifest.json"))
    assert len(manifests) == 24
    grid = list(csv.DictReader((work / "sweep" / "grid.csv").open()))
    assert {(r["w"], r["lambda_max"]) for r in grid} == {
        (w, l) for w in ("0", "10", "30", "50") for l in ("0", "1", "2", "5", "10", "20")}
