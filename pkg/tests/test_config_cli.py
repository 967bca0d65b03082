import csv
import json

import numpy as np
import pytest

from specboltz.cli import EXIT_CACHE, EXIT_CONFIG, EXIT_IO, main
from specboltz.config import CACHE_ENV, ConfigError, RunConfig, load_config, parse_config
from specboltz.diagnostics import MOMENT_COLUMNS, maxwellian
from specboltz.grid import build_grid
from specboltz.kernels import GrazingRutherford
from specboltz.solver import load_state, save_state


def write_config(path, **overrides):
    values = dict(N=4, L=4.0, kernel="isotropic", dt=0.05, t_final=0.2, output_every=2,
                  ic="two_maxwellian", output_dir=str(path / "out"),
                  cache_path=str(path / "w.bwt"))
    values.update(overrides)
    text = "# test run\n" + "".join(f"{k} = {v}\n" for k, v in values.items())
    cfg = path / "run.cfg"
    cfg.write_text(text)
    return cfg


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestParse:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg == RunConfig()
        assert cfg.Kn == 1.0 and cfg.scheme == "euler" and cfg.ic == "shell"

    def test_keys_and_comments(self):
        cfg = parse_config("N = 8\nlambda = -3  # Coulomb\n\nkernel = grazing\neps = 1e-2\n")
        assert cfg.N == 8 and cfg.lam == -3.0 and cfg.eps == 1e-2
        spec = cfg.kernel_spec()
        assert spec.lam == -3.0 and spec.angular == GrazingRutherford(1e-2)

    @pytest.mark.parametrize("text", ["N = 8\nN = 16\n", "foo = 1\n", "N 8\n", "N = eight\n",
                                      "scheme = rk4\n", "ic = vortex\n", "kernel = soft\n",
                                      "kernel = tabulated\n", "operator = bgk\n"])
    def test_errors(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    @pytest.mark.parametrize("text", ["N = 7\n", "L = -1\n", "dt = 0\n", "Kn = -1\n"])
    def test_errors_on_use(self, text):
        cfg = parse_config(text)
        with pytest.raises(ConfigError):
            cfg.grid()
            cfg.solver_config()

    def test_cache_name_tracks_parameters(self, monkeypatch, tmp_path):
        monkeypatch.setenv(CACHE_ENV, str(tmp_path))
        a = parse_config("lambda = -3\nkernel = grazing\neps = 1e-4\n").cache_file()
        b = parse_config("lambda = -3\nkernel = grazing\neps = 1e-3\n").cache_file()
        c = parse_config("lambda = 0\n").cache_file()
        assert len({a, b, c}) == 3 and a.parent == tmp_path
        assert parse_config("cache_path = /x/y.bwt\n").cache_file().as_posix() == "/x/y.bwt"

    def test_load_missing(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.cfg")

    def test_effective_echo(self):
        eff = parse_config("lambda = -2\n").effective()
        assert eff["lambda"] == -2.0 and "lam" not in eff
        assert set(eff) >= {"N", "L", "beta", "kernel", "eps", "operator", "Kn", "dt",
                            "t_final", "scheme", "ic", "output_dir", "cache_path",
                            "output_every"}


class TestCli:
    def test_weights_then_run(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["weights", str(cfg)]) == 0
        assert (tmp_path / "w.bwt").exists()
        assert "exists" in (main(["weights", str(cfg)]) == 0 and capsys.readouterr().out)
        assert main(["run", str(cfg)]) == 0
        out = tmp_path / "out"
        rows = read_rows(out / "moments.csv")
        assert rows[0] == list(MOMENT_COLUMNS)
        assert [float(r[0]) for r in rows[1:]] == pytest.approx([0.0, 0.1, 0.2])
        rho = [float(r[1]) for r in rows[1:]]
        assert max(rho) - min(rho) <= 1e-12
        assert (out / "slice_t0.1.csv").exists() and (out / "state_t0.2.bfs").exists()
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["config"]["Kn"] == 1.0 and meta["config"]["lambda"] == 0.0
        assert len(meta["weight_checksum"]) > 0 and meta["t_end"] == pytest.approx(0.2)
        assert meta["max_imag_residue"] <= 1e-8

    def test_outputs_deterministic(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["weights", str(cfg)])
        main(["run", str(cfg)])
        first = {p.name: p.read_bytes() for p in (tmp_path / "out").glob("*.csv")}
        main(["run", str(cfg)])
        second = {p.name: p.read_bytes() for p in (tmp_path / "out").glob("*.csv")}
        assert first == second

    def test_run_without_cache(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["run", str(cfg)]) == EXIT_CACHE
        assert "weights" in capsys.readouterr().err

    def test_run_with_wrong_lambda(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["weights", str(cfg)]) == 0
        cfg = write_config(tmp_path, **{"lambda": -1.0})
        assert main(["run", str(cfg)]) == EXIT_CACHE
        err = capsys.readouterr().err
        assert "lam" in err and "weight cache" in err

    def test_run_with_wrong_grid(self, tmp_path):
        main(["weights", str(write_config(tmp_path))])
        assert main(["run", str(write_config(tmp_path, L=5.0))]) == EXIT_CACHE

    def test_config_errors(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("N = 4\nspeed = 3\n")
        assert main(["run", str(cfg)]) == EXIT_CONFIG
        assert "unknown key" in capsys.readouterr().err
        assert main(["weights", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG

    def test_restart_appends(self, tmp_path):
        cfg = write_config(tmp_path, t_final=0.1)
        main(["weights", str(cfg)])
        assert main(["run", str(cfg)]) == 0
        state = tmp_path / "out" / "state_t0.1.bfs"
        cfg = write_config(tmp_path, t_final=0.2)
        assert main(["run", str(cfg), "--restart", str(state)]) == 0
        times = [float(r[0]) for r in read_rows(tmp_path / "out" / "moments.csv")[1:]]
        assert times == pytest.approx([0.0, 0.1, 0.2])
        resumed, _, t = load_state(tmp_path / "out" / "state_t0.2.bfs")
        assert t == pytest.approx(0.2)

        other = tmp_path / "straight"
        other.mkdir()
        cfg = write_config(other, t_final=0.2, cache_path=str(tmp_path / "w.bwt"))
        assert main(["run", str(cfg)]) == 0
        straight, _, _ = load_state(other / "out" / "state_t0.2.bfs")
        assert np.array_equal(resumed, straight)

    def test_moments_command(self, tmp_path, capsys):
        g = build_grid(24, 7.5)
        save_state(tmp_path / "m.bfs", maxwellian(1.0, 0.0, 1.0, g), g, 2.5)
        assert main(["moments", str(tmp_path / "m.bfs")]) == 0
        out = dict(line.split(None, 1) for line in capsys.readouterr().out.splitlines())
        assert float(out["t"]) == 2.5
        assert float(out["rho"]) == pytest.approx(1.0, abs=1e-10)
        assert float(out["T"]) == pytest.approx(1.0, abs=1e-9)
        assert "np.float64" not in out["V"]

    def test_moments_of_zero_state(self, tmp_path, capsys):
        g = build_grid(4, 1.0)
        save_state(tmp_path / "z.bfs", np.zeros(g.shape), g, 0.0)
        assert main(["moments", str(tmp_path / "z.bfs")]) == 0
        assert "degenerate" in capsys.readouterr().out

    def test_moments_bad_file(self, tmp_path):
        p = tmp_path / "junk.bfs"
        p.write_bytes(b"nothing here")
        assert main(["moments", str(p)]) == EXIT_IO
        assert main(["moments", str(tmp_path / "none.bfs")]) == EXIT_IO

    def test_limits(self, tmp_path, capsys):
        out = tmp_path / "lim"
        code = main(["limits", "--eps", "1e-1,1e-2,1e-3", "--samples", "6", "--N", "4",
                     "--output-dir", str(out)])
        assert code == 0
        gap = read_rows(out / "g_landau_gap.csv")
        assert gap[0] == ["eps", "max_rel_gap", "mean_rel_gap"]
        col = [float(r[1]) for r in gap[1:]]
        assert all(a > b for a, b in zip(col, col[1:]))
        frob = [float(r[1]) for r in read_rows(out / "weight_landau_gap.csv")[1:]]
        assert all(a > b for a, b in zip(frob, frob[1:]))
        lam = read_rows(out / "grazing_moments.csv")
        assert [float(r[1]) for r in lam[1:]] == sorted(float(r[1]) for r in lam[1:])
        assert len(capsys.readouterr().out.splitlines()) == 3
