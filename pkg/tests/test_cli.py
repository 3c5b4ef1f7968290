import os

import numpy as np
import pytest

from noddikit.cli import main
from noddikit.data import load_dataset, save_dataset, VoxelDataset
from noddikit.dictionary import load_dictionary


@pytest.fixture()
def small_vds(tmp_path):
    path = tmp_path / "small.vds"
    assert main(["gen-data", "--n", "6", "--noise", "none",
                 "--out", str(path)]) == 0
    return path


def run(argv):
    return main([str(a) for a in argv])


# ---------------------------------------------------------------------------
# gen-data


def test_gen_data_creates_loadable_dataset(tmp_path, capsys):
    out = tmp_path / "d.vds"
    code = run(["gen-data", "--n", 5, "--out", out])
    assert code == 0
    line = capsys.readouterr().out
    assert "gen-data: n=5 K=61" in line
    ds = load_dataset(out)
    assert ds.n_voxels == 5
    assert ds.targets is not None


def test_gen_data_deterministic(tmp_path):
    a, b = tmp_path / "a.vds", tmp_path / "b.vds"
    run(["gen-data", "--n", 4, "--seed", 3, "--out", a])
    run(["gen-data", "--n", 4, "--seed", 3, "--out", b])
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.vds"
    run(["gen-data", "--n", 4, "--seed", 4, "--out", c])
    assert a.read_bytes() != c.read_bytes()


def test_gen_data_rejects_bad_snr(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run(["gen-data", "--n", 4, "--snr", 0, "--out", tmp_path / "x.vds"])
    assert exc.value.code == 2
    assert not (tmp_path / "x.vds").exists()


def test_gen_data_missing_scheme_exits_3(tmp_path, capsys):
    code = run(["gen-data", "--n", 4, "--scheme", "/no/such/scheme.txt",
                "--out", tmp_path / "x.vds"])
    assert code == 3
    assert "scheme" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# build-dict


def test_build_dict_default(tmp_path, capsys):
    out = tmp_path / "d.dict"
    assert run(["build-dict", "--out", out]) == 0
    assert "K=61 width=145" in capsys.readouterr().out
    d = load_dictionary(out)
    assert d.width == 145


def test_build_dict_expanded_with_csv(tmp_path):
    out = tmp_path / "d.dict"
    csv = tmp_path / "d.csv"
    assert run(["build-dict", "--orientations", 4, "--n-vic", 2,
                "--n-od", 2, "--out", out, "--csv", csv]) == 0
    d = load_dictionary(out)
    assert d.width == 4 * 4 + 1
    assert len(csv.read_text().splitlines()) == 1 + d.K


# ---------------------------------------------------------------------------
# fit-dti / fit-amico


def test_fit_dti_csv(tmp_path, small_vds):
    out = tmp_path / "dti.csv"
    assert run(["fit-dti", "--data", small_vds, "--out", out]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "voxel_id,e_x,e_y,e_z,residual,isotropic"
    assert len(lines) == 7
    assert [ln.split(",")[0] for ln in lines[1:]] == [str(i) for i in range(6)]


def test_fit_amico_csv_and_report(tmp_path, small_vds, capsys):
    out = tmp_path / "amico.csv"
    assert run(["fit-amico", "--data", small_vds, "--out", out]) == 0
    printed = capsys.readouterr().out
    assert "fit-amico: n=6" in printed
    assert "mad_v_ic=" in printed
    lines = out.read_text().splitlines()
    assert lines[0].startswith("voxel_id,v_ic,v_iso,od,mu_")
    assert len(lines) == 7


def test_fit_amico_missing_data_exits_3(tmp_path, capsys):
    code = run(["fit-amico", "--data", tmp_path / "absent.vds",
                "--out", tmp_path / "o.csv"])
    assert code == 3
    assert "absent.vds" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# train / predict


@pytest.fixture()
def train_vds(tmp_path):
    path = tmp_path / "train.vds"
    assert main(["gen-data", "--n", "30", "--noise", "none",
                 "--out", str(path)]) == 0
    return path


def test_train_medn_and_predict(tmp_path, train_vds, capsys):
    weights = tmp_path / "w.mdnw"
    history = tmp_path / "h.csv"
    code = run(["train", "--data", train_vds, "--out", weights,
                "--epochs", 2, "--batch-size", 8, "--history", history])
    assert code == 0
    printed = capsys.readouterr().out
    assert "epoch 1: train_loss=" in printed
    assert "train: model=medn best_epoch=" in printed
    assert weights.read_bytes()[:4] == b"MDNW"
    assert len(history.read_text().splitlines()) == 3

    out = tmp_path / "pred.csv"
    assert run(["predict", "--weights", weights, "--data", train_vds,
                "--out", out]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "voxel_id,v_ic,v_iso,od"
    assert len(lines) == 31
    again = tmp_path / "pred2.csv"
    run(["predict", "--weights", weights, "--data", train_vds,
         "--out", again])
    assert out.read_bytes() == again.read_bytes()


def test_train_medn_dictionary_init(tmp_path, train_vds):
    weights = tmp_path / "w.mdnw"
    code = run(["train", "--data", train_vds, "--out", weights,
                "--epochs", 1, "--batch-size", 8, "--init", "dictionary"])
    assert code == 0
    from noddikit.medn import load_weights
    assert load_weights(weights).N == 301


def test_train_mlp(tmp_path, train_vds):
    weights = tmp_path / "w.mlpw"
    code = run(["train", "--data", train_vds, "--model", "mlp",
                "--out", weights, "--epochs", 2, "--batch-size", 8])
    assert code == 0
    assert weights.read_bytes()[:4] == b"MLPW"
    out = tmp_path / "pred.csv"
    assert run(["predict", "--weights", weights, "--data", train_vds,
                "--out", out]) == 0
    assert len(out.read_text().splitlines()) == 31


def test_train_requires_targets(tmp_path, small_vds, capsys):
    ds = load_dataset(small_vds)
    bare = VoxelDataset(ds.scheme, ds.signals)
    path = tmp_path / "bare.vds"
    save_dataset(bare, path)
    code = run(["train", "--data", path, "--out", tmp_path / "w.mdnw",
                "--epochs", 1])
    assert code == 3
    assert "targets" in capsys.readouterr().err


def test_predict_k_mismatch_exits_3(tmp_path, train_vds, capsys):
    weights = tmp_path / "w.mlpw"
    run(["train", "--data", train_vds, "--model", "mlp", "--out", weights,
         "--epochs", 1, "--batch-size", 8])
    dense = tmp_path / "dense.vds"
    run(["gen-data", "--n", 3, "--scheme", "dense_three_shell_90",
         "--noise", "none", "--out", dense])
    code = run(["predict", "--weights", weights, "--data", dense,
                "--out", tmp_path / "p.csv"])
    assert code == 3
    assert "K=" in capsys.readouterr().err


def test_predict_rejects_unknown_weights(tmp_path, small_vds, capsys):
    bogus = tmp_path / "w.bin"
    bogus.write_bytes(b"JUNKJUNKJUNK")
    code = run(["predict", "--weights", bogus, "--data", small_vds,
                "--out", tmp_path / "p.csv"])
    assert code == 3
    assert "magic" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# evaluate


def test_evaluate_pred_vs_gold(tmp_path, train_vds, capsys):
    weights = tmp_path / "w.mlpw"
    run(["train", "--data", train_vds, "--model", "mlp", "--out", weights,
         "--epochs", 1, "--batch-size", 8])
    pred = tmp_path / "pred.csv"
    run(["predict", "--weights", weights, "--data", train_vds,
         "--out", pred])
    capsys.readouterr()
    report_csv = tmp_path / "report.csv"
    code = run(["evaluate", "--pred", pred, "--gold", train_vds,
                "--out", report_csv])
    assert code == 0
    printed = capsys.readouterr().out
    assert printed.startswith("n=30\n")
    assert "mad_od=" in printed
    assert report_csv.read_text().splitlines()[0] == "quantity,mad"


def test_evaluate_self_is_zero(tmp_path, train_vds, capsys):
    weights = tmp_path / "w.mlpw"
    run(["train", "--data", train_vds, "--model", "mlp", "--out", weights,
         "--epochs", 1, "--batch-size", 8])
    pred = tmp_path / "pred.csv"
    run(["predict", "--weights", weights, "--data", train_vds,
         "--out", pred])
    capsys.readouterr()
    assert run(["evaluate", "--pred", pred, "--gold", pred]) == 0
    printed = capsys.readouterr().out
    assert "mad_v_ic=0\n" in printed


def test_evaluate_with_comparator(tmp_path, small_vds, capsys):
    amico = tmp_path / "amico.csv"
    run(["fit-amico", "--data", small_vds, "--out", amico])
    capsys.readouterr()
    code = run(["evaluate", "--pred", amico, "--gold", small_vds,
                "--comparator", amico])
    assert code == 0
    printed = capsys.readouterr().out
    assert "t_v_ic=0\n" in printed
    assert "degenerate_v_ic=1" in printed


def test_evaluate_id_mismatch_exits_3(tmp_path, small_vds, capsys):
    amico = tmp_path / "amico.csv"
    run(["fit-amico", "--data", small_vds, "--out", amico])
    lines = amico.read_text().splitlines()
    parts = lines[1].split(",")
    parts[0] = "99"
    lines[1] = ",".join(parts)
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    code = run(["evaluate", "--pred", bad, "--gold", small_vds])
    assert code == 3
    assert "ids" in capsys.readouterr().err


def test_evaluate_rejects_missing_columns(tmp_path, small_vds, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("voxel_id,v_ic\n0,0.5\n")
    code = run(["evaluate", "--pred", bad, "--gold", small_vds])
    assert code == 3
    assert "column" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# config files and global flags


def test_config_file_supplies_required_flags(tmp_path, capsys):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("# defaults\nn=25\nsnr=12\nnoise=none\n")
    out = tmp_path / "d.vds"
    code = run(["gen-data", "--config", cfg, "--out", out])
    assert code == 0
    assert "n=25" in capsys.readouterr().out
    assert load_dataset(out).n_voxels == 25


def test_config_explicit_flags_win(tmp_path, capsys):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("n=25\nsnr=12\n")
    out = tmp_path / "d.vds"
    code = run(["gen-data", "--config", cfg, "--snr", 30, "--noise", "none",
                "--out", out])
    assert code == 0
    assert "snr=30" in capsys.readouterr().out


def test_config_missing_file_exits_3(tmp_path, capsys):
    code = run(["gen-data", "--config", tmp_path / "nope.cfg",
                "--n", 4, "--out", tmp_path / "d.vds"])
    assert code == 3


def test_config_malformed_line_exits_3(tmp_path, capsys):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("this is not a key value pair\n")
    code = run(["gen-data", "--config", cfg, "--n", 4,
                "--out", tmp_path / "d.vds"])
    assert code == 3
    assert "key=value" in capsys.readouterr().err


def test_strict_deterministic_pins_environment(tmp_path):
    saved = {var: os.environ.get(var)
             for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                         "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")}
    try:
        a, b = tmp_path / "a.vds", tmp_path / "b.vds"
        run(["gen-data", "--n", 4, "--strict-deterministic", "--out", a])
        assert os.environ["OMP_NUM_THREADS"] == "1"
        run(["gen-data", "--n", 4, "--strict-deterministic", "--out", b])
        assert a.read_bytes() == b.read_bytes()
    finally:
        for var, value in saved.items():
            if value is None:
                os.environ.pop(var, None)
            else:
                os.environ[var] = value


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_help_exits_0():
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
