import hashlib
import os

import numpy as np
import pytest

from snailtwpa import cli, noise
from snailtwpa.config import ConfigError, load_config


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_defaults_validate():
    cfg = load_config()
    assert cfg.n_cells() == 441
    assert len(cfg.oracle_freqs()) == 10


def test_overrides_and_types(tmp_path):
    p = _write(tmp_path / "a.ini", "[operating]\nflux = 0.34\ncells = 60\n[execution]\nrectification = no\n")
    cfg = load_config(p, {"operating": {"fp_ghz": 7.0, "flux": None}})
    assert cfg.operating.flux == 0.34 and cfg.operating.fp_ghz == 7.0
    assert cfg.operating.cells == 60 and cfg.execution.rectification is False


def test_resolved_echo_round_trips(tmp_path):
    cfg = load_config(_write(tmp_path / "a.ini", "[device]\ne_j2 = 1000\nc_farad = 2.5e-13\n"))
    again = load_config(_write(tmp_path / "b.ini", cfg.to_ini()))
    assert again == cfg


@pytest.mark.parametrize("text", [
    "[nonsense]\nx = 1\n",
    "[device]\nbogus = 1\n",
    "[device]\nalpha = fast\n",
    "[device]\nalpha = 1.5\n",
    "[device]\ne_j2 = 1000\n",
    "[execution]\ntier = huge\n",
    "[operating]\ncells = 100\n",
])
def test_bad_configs(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path / "bad.ini", text))


def test_missing_config_exit_code(tmp_path):
    assert cli.main(["snail-sweep", "--config", str(tmp_path / "none.ini"), "--out", str(tmp_path)]) == 2


def _digest(folder):
    with open(os.path.join(folder, "MANIFEST"), "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def test_snail_sweep_outputs_and_determinism(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert cli.main(["snail-sweep", "--out", a]) == 0
    first = _digest(a)
    assert cli.main(["snail-sweep", "--out", a]) == 0
    assert _digest(a) == first
    assert cli.main(["snail-sweep", "--out", b]) == 0
    csv_a = open(os.path.join(a, "snail_sweep.csv"), "rb").read()
    assert csv_a == open(os.path.join(b, "snail_sweep.csv"), "rb").read()
    lines = open(os.path.join(a, "snail_sweep.csv")).read().splitlines()
    assert len(lines) == 502
    names = [ln.split()[1] for ln in open(os.path.join(a, "MANIFEST")).read().splitlines()]
    assert names == sorted(names) == ["resolved.ini", "snail_sweep.csv"]
    assert "# calibrated: e_j2" in open(os.path.join(a, "resolved.ini")).read()


def test_dispersion_passivity_column(tmp_path):
    out = str(tmp_path)
    assert cli.main(["dispersion", "--out", out]) == 0
    data = np.genfromtxt(os.path.join(out, "dispersion.csv"), delimiter=",", names=True)
    assert np.all(data["passivity"] <= 1 + 1e-9)


def test_gain_sweep_partial_exit_code(tmp_path):
    p = _write(tmp_path / "g.ini",
               "[operating]\nsignal_start_ghz = 0.8\nsignal_stop_ghz = 1.0\nsignal_step_ghz = 0.1\ncells = 60\n")
    out = str(tmp_path / "o")
    assert cli.main(["gain-sweep", "--config", p, "--out", out]) == 4
    text = open(os.path.join(out, "gaps.txt")).read()
    assert "0.9 GHz" in text
    rows = open(os.path.join(out, "gain.csv")).read().splitlines()
    assert rows[2].split(",")[1] == "nan"


def test_gain_sweep_jobs_do_not_change_output(tmp_path):
    p = _write(tmp_path / "g.ini",
               "[operating]\nsignal_start_ghz = 2.0\nsignal_stop_ghz = 2.4\nsignal_step_ghz = 0.2\ncells = 60\n")
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert cli.main(["gain-sweep", "--config", p, "--out", a]) == 0
    assert cli.main(["gain-sweep", "--config", p, "--out", b, "--jobs", "2"]) == 0
    assert open(os.path.join(a, "gain.csv")).read() == open(os.path.join(b, "gain.csv")).read()


def test_numeric_failure_exit_code(tmp_path):
    # a pump inside the stop band has no propagating mode to launch
    p = _write(tmp_path / "s.ini", "[operating]\nshg_f_ghz = 12.0\n")
    assert cli.main(["shg", "--config", p, "--out", str(tmp_path / "o")]) == 3


def test_noise_fit_from_csv(tmp_path):
    m = noise.NoiseModel(0.73, 24.85)
    g = np.linspace(0, 20, 11)
    G = 10 ** (g / 10)
    rows = ["gain_db,dsnr_db,t_noise_k,f_hz"]
    for gi, Gi in zip(g, G):
        t = noise.noise_temperature(noise.total_noise(m, Gi), 6.034e9)
        rows.append(f"{float(gi)!r},{float(10 * np.log10(noise.delta_snr(m, Gi)))!r},{float(t)!r},6.034e9")
    data = _write(tmp_path / "n.csv", "\n".join(rows) + "\n")
    cfg = _write(tmp_path / "n.ini", f"[noise]\ndata = {data}\n")
    out = str(tmp_path / "o")
    assert cli.main(["noise-fit", "--config", cfg, "--out", out]) == 0
    fitted = np.genfromtxt(os.path.join(out, "noise_fit.csv"), delimiter=",", names=True, dtype=None,
                           encoding="utf-8")
    assert float(fitted["D"]) == pytest.approx(0.73, rel=1e-6)


def test_noise_fit_bad_csv(tmp_path):
    for i, text in enumerate(("gain,other\n1,2\n", "gain_db,dsnr_db\n1,x\n")):
        data = _write(tmp_path / f"n{i}.csv", text)
        cfg = _write(tmp_path / f"n{i}.ini", f"[noise]\ndata = {data}\n")
        assert cli.main(["noise-fit", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
