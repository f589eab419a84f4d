import csv
import json

import numpy as np
import pytest

from mdlbundle import ConfigError
from mdlbundle.cli import main
from mdlbundle.harness import ExperimentSpec, load_spec, read_symbols, run, write_symbols

FAMILY = 'kind = "mixture"\ncomponents = [[0.8, 0.2], [0.3, 0.7]]\ntau = 0.2\n'


def read_rows(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "fam.toml").write_text(FAMILY)
    return tmp_path


def spec_file(workdir, name, body):
    path = workdir / name
    path.write_text('family = "fam.toml"\n' + body)
    return path


def test_kraft_sweep(workdir):
    path = spec_file(workdir, "k.toml", 'kind = "kraft-sweep"\nn = [1,2,3,4,5,6,7,8,9,10]\nout = "out"\n')
    assert main(["run", str(path)]) == 0
    csv_path = workdir / "out" / "kraft-sweep.csv"
    head = csv_path.read_text().splitlines()
    assert head[0] == "# schema: kraft-sweep v1"
    rows = read_rows(csv_path)
    assert [int(r["n"]) for r in rows] == list(range(1, 11))
    assert all(float(r["kraft_sum"]) <= 1 + 1e-9 for r in rows)
    manifest = json.loads((workdir / "out" / "manifest.json").read_text())
    assert manifest["status"] == "PASSED"
    assert {"spec", "versions", "seed", "wall_time_s", "outputs"} <= set(manifest)


def test_nml_compare_columns(workdir):
    path = spec_file(workdir, "n.json", "")
    path.write_text(json.dumps({"family": "fam.toml", "kind": "nml-compare", "n": [4, 8, 12], "out": "nml"}))
    assert main(["run", str(path)]) == 0
    rows = read_rows(workdir / "nml" / "nml-compare.csv")
    assert {"shtarkov", "two_part_max_regret", "reg_bar"} <= set(rows[0])
    assert all(float(r["two_part_max_regret"]) >= float(r["shtarkov"]) for r in rows)


def test_regret_curve_is_reproducible(workdir):
    path = spec_file(workdir, "r.toml", 'kind = "regret-curve"\nn = [10, 40]\nsamples = 20\nseed = 3\n')
    assert main(["run", str(path), "--out", str(workdir / "a")]) == 0
    assert main(["run", str(path), "--out", str(workdir / "b")]) == 0
    a = (workdir / "a" / "regret-curve.csv").read_bytes()
    assert a == (workdir / "b" / "regret-curve.csv").read_bytes()
    assert main(["run", str(path), "--out", str(workdir / "c"), "--seed", "4"]) == 0
    assert a != (workdir / "c" / "regret-curve.csv").read_bytes()


def test_bound_audit_inline_family(tmp_path):
    path = tmp_path / "b.toml"
    path.write_text('family = {kind = "bernoulli-canonical"}\nkind = "bound-audit"\nn = [8, 10, 12]\nout = "o"\n')
    assert main(["run", str(path)]) == 0
    rows = read_rows(tmp_path / "o" / "bound-audit.csv")
    assert all(r["within_bound"] == "true" for r in rows)


def test_risk_cert_writes_certificates(workdir):
    body = 'kind = "risk-cert"\nn = [6]\nb = [0.1]\ntrials = 2000\ntheta_star = [0.4]\nout = "rk"\n'
    path = spec_file(workdir, "rk.toml", body)
    assert main(["run", str(path)]) == 0
    certs = sorted(p.name for p in (workdir / "rk").glob("*.json"))
    assert "manifest.json" in certs and len(certs) == 3
    chain = json.loads((workdir / "rk" / "risk-chain-n6.json").read_text())
    assert chain["passed"] is True


def test_config_errors_exit_with_two(workdir, capsys):
    assert main(["run", str(spec_file(workdir, "x.toml", 'kind = "plot"\nn = [1]\n'))]) == 2
    assert main(["run", str(spec_file(workdir, "y.toml", 'kind = "kraft-sweep"\nn = [3, 2]\n'))]) == 2
    assert main(["run", str(spec_file(workdir, "z.toml", 'kind = "kraft-sweep"\nn = [2]\nbogus = 1\n'))]) == 2
    assert main(["run", str(workdir / "missing.toml")]) == 2
    assert main(["run", str(spec_file(workdir, "w.toml", 'kind = "kraft-sweep"\nn = [2]\n')), "--alpha", "0.5"]) == 2
    assert "error" in capsys.readouterr().err


def test_spec_overrides(workdir):
    path = spec_file(workdir, "s.toml", 'kind = "kraft-sweep"\nn = [2]\nseed = 1\n')
    spec = load_spec(path, {"alpha": 3.0, "use_bundle": False, "seed": 9, "out": workdir / "o"})
    assert isinstance(spec, ExperimentSpec)
    assert spec.config.alpha == 3.0 and not spec.config.use_bundle
    assert spec.seed == 9 and spec.out == workdir / "o"
    with pytest.raises(ConfigError):
        load_spec(path, {"frobnicate": 1})


def test_compress_roundtrip(workdir, capsys):
    rng = np.random.default_rng(0)
    xs = rng.choice(2, size=10_000, p=[0.35, 0.65])
    src = workdir / "sym.bin"
    write_symbols(src, xs, "bytes")
    assert main(["compress", str(src), "--family", str(workdir / "fam.toml"), "-o", str(workdir / "s.mdl")]) == 0
    out = capsys.readouterr().out
    ideal = float(out.split("ideal_bits=")[1].split()[0])
    achieved = int(out.split("achieved_bits=")[1].split()[0])
    assert achieved <= ideal + 32
    back = workdir / "back.bin"
    assert main(["decompress", str(workdir / "s.mdl"), "--family", str(workdir / "fam.toml"), "-o", str(back)]) == 0
    assert back.read_bytes() == src.read_bytes()


def test_compress_text_format_and_flags(workdir):
    src = workdir / "sym.txt"
    src.write_text("0 1 1 0 1 1 1 0\n")
    fam = str(workdir / "fam.toml")
    common = ["--family", fam, "--format", "text", "--alpha", "3", "--no-bundle"]
    assert main(["compress", str(src), "-o", str(workdir / "t.mdl"), *common]) == 0
    assert main(["decompress", str(workdir / "t.mdl"), "-o", str(workdir / "t.txt"), *common]) == 0
    assert read_symbols(workdir / "t.txt", 2, "text").tolist() == [0, 1, 1, 0, 1, 1, 1, 0]


def test_empty_file_roundtrip(workdir):
    src = workdir / "empty.bin"
    src.write_bytes(b"")
    fam = str(workdir / "fam.toml")
    assert main(["compress", str(src), "--family", fam, "-o", str(workdir / "e.mdl")]) == 0
    assert len((workdir / "e.mdl").read_bytes()) == 6
    assert main(["decompress", str(workdir / "e.mdl"), "--family", fam, "-o", str(workdir / "e.bin")]) == 0
    assert (workdir / "e.bin").read_bytes() == b""


def test_alphabet_violation_exits_with_two(workdir):
    src = workdir / "bad.bin"
    src.write_bytes(bytes([0, 1, 2]))
    assert main(["compress", str(src), "--family", str(workdir / "fam.toml"), "-o", str(workdir / "x")]) == 2


def test_corrupt_stream_exits_with_one(workdir):
    src = workdir / "sym.bin"
    write_symbols(src, [0, 1] * 50, "bytes")
    fam = str(workdir / "fam.toml")
    main(["compress", str(src), "--family", fam, "-o", str(workdir / "s.mdl")])
    blob = bytearray((workdir / "s.mdl").read_bytes())
    blob[8] ^= 0xFF
    (workdir / "s.mdl").write_bytes(bytes(blob))
    assert main(["decompress", str(workdir / "s.mdl"), "--family", fam, "-o", str(workdir / "o.bin")]) == 1


def test_compress_experiment(workdir):
    write_symbols(workdir / "in.bin", [1, 0, 1, 1] * 40, "bytes")
    path = spec_file(workdir, "c.toml", 'kind = "compress"\ninput = "in.bin"\nout = "cmp"\n')
    assert run(load_spec(path)) == 0
    rows = read_rows(workdir / "cmp" / "compress.csv")
    assert rows[0]["roundtrip"] == "true"
    assert (workdir / "cmp" / "compressed.bin").exists()
