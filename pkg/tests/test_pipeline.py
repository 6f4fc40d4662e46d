import json

import numpy as np
import pytest
from click.testing import CliRunner

import dynsurf.pipeline.data as data
import dynsurf.pipeline.training as training
from dynsurf.checkpoint import CheckpointError
from dynsurf.cli import main as cli_main
from dynsurf.geometry import TriMesh, icosphere, sample_surface
from dynsurf.pipeline import reconstruct as rec
from dynsurf.pipeline.config import (ConfigError, RunConfig, config_from_dict,
                                     load_config, save_config, validate_config)
from dynsurf.pipeline.synth import (SyntheticSequenceSpec, build_sequence,
                                    load_manifest, make_default_specs,
                                    sequences_in_split, synth_dataset)
from dynsurf.tensor import NumericError, Tensor


def tiny_cfg(dataset_dir, out_dir) -> RunConfig:
    cfg = load_config(None)
    cfg.dataset_dir = str(dataset_dir)
    cfg.out_dir = str(out_dir)
    cfg.frames = 3
    cfg.train_per_family = 1
    cfg.bank_surface = 512
    cfg.bank_uniform = 256
    cfg.encoder_points = 64
    cfg.query_batch = 64
    cfg.observed_points = 48
    cfg.shape_vae_steps = 300
    cfg.deform_vae_steps = 120
    cfg.shape_diff_steps = 80
    cfg.deform_diff_steps = 80
    cfg.diffusion_batch = 1
    cfg.val_every = 60
    cfg.iou_samples = 2000
    cfg.chamfer_samples = 400
    cfg.corr_samples = 128
    validate_config(cfg)
    return cfg


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    specs = make_default_specs(seed=0, frames=3, per_family=1)
    synth_dataset(specs, root)
    return root


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    """All four loops at toy scale; shared by the evaluation tests."""
    out = tmp_path_factory.mktemp("trained")
    cfg = tiny_cfg(dataset, out)
    training.train_shape_vae(cfg)
    training.train_deform_vae(cfg)
    training.train_shape_diffusion(cfg)
    training.train_deform_diffusion(cfg)
    return cfg


# -- synthesis ---------------------------------------------------------------


def test_synth_byte_deterministic(tmp_path):
    specs = make_default_specs(seed=3, frames=2, per_family=1)
    a = tmp_path / "a"
    b = tmp_path / "b"
    synth_dataset(specs, a)
    synth_dataset(specs, b)
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    rel = json.loads((a / "manifest.json").read_text())["sequences"][0]["files"][0]
    assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_zero_amplitude_is_static():
    spec = SyntheticSequenceSpec(
        name="s", family="breathing-sphere", split="train", frames=4,
        identity={"radius": 1.0, "stretch_z": 1.0},
        motion={"amplitude": 0.0, "phase": 0.3}, seed=0)
    frames = build_sequence(spec)
    for m in frames[1:]:
        assert np.array_equal(m.vertices, frames[0].vertices)
        assert np.array_equal(m.faces, frames[0].faces)


def test_split_counts(dataset):
    man = load_manifest(dataset)
    assert len(sequences_in_split(man, "train")) == 4
    assert len(sequences_in_split(man, "unseen-motion")) == 4
    assert len(sequences_in_split(man, "unseen-identity")) == 4
    assert len(sequences_in_split(man, "all")) == 12
    with pytest.raises(ValueError):
        sequences_in_split(man, "test")


def test_sequences_normalized(dataset):
    man = load_manifest(dataset)
    rec0 = man["sequences"][0]
    from dynsurf.pipeline.synth import load_sequence_meshes
    meshes = load_sequence_meshes(dataset, rec0)
    stacked = np.concatenate([m.vertices for m in meshes])
    lo, hi = stacked.min(0), stacked.max(0)
    assert (hi - lo).max() == pytest.approx(1.0, abs=1e-9)
    assert np.abs(lo + hi).max() < 1e-9  # centered


def test_spec_validation():
    good = dict(name="x", family="breathing-sphere", split="train", frames=3,
                identity={"radius": 1.0, "stretch_z": 1.0},
                motion={"amplitude": 0.1, "phase": 0.0}, seed=0)
    SyntheticSequenceSpec(**good)
    for patch in [{"family": "pulsing-torus"}, {"split": "holdout"},
                  {"frames": 1}, {"identity": {"radius": 1.0}},
                  {"motion": {"amplitude": 0.1}}]:
        with pytest.raises(ValueError):
            SyntheticSequenceSpec(**{**good, **patch})


# -- config ------------------------------------------------------------------


def test_config_yaml_roundtrip(tmp_path):
    cfg = load_config(None)
    cfg.seed = 9
    cfg.shape_vae_steps = 77
    cfg.noise_sigma = 0.02
    path = tmp_path / "run.yaml"
    save_config(path, cfg)
    assert load_config(path) == cfg


def test_config_rejects_unknown_key():
    with pytest.raises(ConfigError):
        config_from_dict({"training": {"learning_rate": 1e-3}})
    with pytest.raises(ConfigError):
        config_from_dict({"optimizer": {"lr": 1e-3}})


def test_config_rejects_latents_beyond_observations():
    cfg = load_config(None)
    cfg.latent_codes = 256
    cfg.observed_points = 128
    with pytest.raises(ConfigError, match="condition encoders"):
        validate_config(cfg)


# -- corruption --------------------------------------------------------------


def test_corruption_order(monkeypatch):
    mesh = icosphere(2, 0.4)
    samples = sample_surface(mesh, 200, seed=0)
    calls = []
    real_partial = data.render_partial_view
    real_sub = data._subsample
    real_noise = data.add_observation_noise

    def spy_partial(*a, **k):
        calls.append("partial")
        return real_partial(*a, **k)

    def spy_sub(*a, **k):
        calls.append("subsample")
        return real_sub(*a, **k)

    def spy_noise(*a, **k):
        calls.append("noise")
        return real_noise(*a, **k)

    monkeypatch.setattr(data, "render_partial_view", spy_partial)
    monkeypatch.setattr(data, "_subsample", spy_sub)
    monkeypatch.setattr(data, "add_observation_noise", spy_noise)
    out = data.corrupt_observation(mesh, samples, 64, 0.05, True, seed=1)
    assert calls == ["partial", "subsample", "noise"]
    assert out.shape == (64, 3)


def test_corruption_skips_partial_when_disabled(monkeypatch):
    mesh = icosphere(2, 0.4)
    samples = sample_surface(mesh, 200, seed=0)

    def boom(*a, **k):
        raise AssertionError("partial-view filter must not run")

    monkeypatch.setattr(data, "render_partial_view", boom)
    out = data.corrupt_observation(mesh, samples, 64, 0.0, False, seed=1)
    # sigma zero: pure subsample of the clean samples
    assert all(row in samples.points for row in out)


def test_corruption_deterministic():
    mesh = icosphere(2, 0.4)
    samples = sample_surface(mesh, 200, seed=0)
    a = data.corrupt_observation(mesh, samples, 64, 0.05, False, seed=7)
    b = data.corrupt_observation(mesh, samples, 64, 0.05, False, seed=7)
    assert np.array_equal(a, b)


def test_train_and_eval_observations_agree(dataset, tmp_path):
    # the evaluation pipeline must corrupt exactly like the training side
    cfg = tiny_cfg(dataset, tmp_path)
    man = load_manifest(dataset)
    record = sequences_in_split(man, "train")[0]
    from dynsurf.pipeline.synth import load_sequence_meshes
    meshes = load_sequence_meshes(dataset, record)
    seed0 = training.bank_seed(cfg, record)
    bank_a = data.build_sequence_bank(record, meshes, cfg, seed0, with_queries=False)
    bank_b = training.load_train_banks(cfg, with_queries=False)[0]
    for oa, ob in zip(bank_a.observations, bank_b.observations):
        assert np.array_equal(oa, ob)


# -- training ----------------------------------------------------------------


def test_nan_abort_records_step(dataset, tmp_path, monkeypatch):
    cfg = tiny_cfg(dataset, tmp_path)
    cfg.shape_vae_steps = 10
    real = training.shape_vae_loss
    count = {"n": 0}

    def flaky(*a, **k):
        total, bce, kl = real(*a, **k)
        count["n"] += 1
        if count["n"] == 3:
            total = Tensor(np.array(np.nan, dtype=np.float32))
        return total, bce, kl

    monkeypatch.setattr(training, "shape_vae_loss", flaky)
    with pytest.raises(NumericError, match="step 3"):
        training.train_shape_vae(cfg)
    lines = (tmp_path / "shape_vae_loss.csv").read_text().splitlines()
    assert len(lines) == 4  # header plus the three logged steps
    assert lines[-1].startswith("3,")


def test_resume_matches_straight_run(dataset, tmp_path):
    cfg_a = tiny_cfg(dataset, tmp_path / "a")
    cfg_a.shape_vae_steps = 8
    cfg_a.val_every = 4
    training.train_shape_vae(cfg_a)

    cfg_b = tiny_cfg(dataset, tmp_path / "b")
    cfg_b.shape_vae_steps = 4
    cfg_b.val_every = 4
    training.train_shape_vae(cfg_b)
    cfg_b.shape_vae_steps = 8
    training.train_shape_vae(cfg_b, resume=True)

    a_csv = (tmp_path / "a" / "shape_vae_loss.csv").read_bytes()
    b_csv = (tmp_path / "b" / "shape_vae_loss.csv").read_bytes()
    assert a_csv == b_csv
    a_ck = (tmp_path / "a" / training.SHAPE_VAE_CKPT).read_bytes()
    b_ck = (tmp_path / "b" / training.SHAPE_VAE_CKPT).read_bytes()
    assert a_ck == b_ck


def test_resume_requires_state(dataset, tmp_path):
    cfg = tiny_cfg(dataset, tmp_path)
    with pytest.raises(CheckpointError, match="cannot resume"):
        training.train_shape_vae(cfg, resume=True)


def test_diffusion_requires_autoencoder(dataset, tmp_path):
    cfg = tiny_cfg(dataset, tmp_path)
    with pytest.raises(CheckpointError):
        training.train_shape_diffusion(cfg)


def test_latent_cache_round_trip(trained):
    banks = training.load_train_banks(trained, with_queries=False)
    first = training.cache_shape_latents(trained, banks)
    again = training.cache_shape_latents(trained, banks)
    assert sorted(first) == sorted(again)
    for k in first:
        assert np.array_equal(first[k], again[k])
        assert first[k].dtype == np.float32


# -- reconstruction and evaluation -------------------------------------------


def test_reconstruct_validates_observations(trained):
    models = rec.load_models(trained)
    with pytest.raises(ValueError, match="at least 2 frames"):
        rec.reconstruct_sequence([np.zeros((48, 3))], models, trained, 0)
    bad = [np.zeros((48, 3)), np.zeros((4, 3))]
    with pytest.raises(ValueError, match="frame 2"):
        rec.reconstruct_sequence(bad, models, trained, 0)


def test_reconstruct_reports_empty_surface(trained, monkeypatch):
    models = rec.load_models(trained)
    empty = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    monkeypatch.setattr(rec, "marching_cubes", lambda *a, **k: empty)
    obs = [np.random.default_rng(0).normal(size=(48, 3)) for _ in range(3)]
    with pytest.raises(rec.ReconstructionError, match="empty iso-surface"):
        rec.reconstruct_sequence(obs, models, trained, 0)


def test_grid_decode_boundary_closed(trained):
    models = rec.load_models(trained)
    z = Tensor(np.zeros((trained.latent_codes, trained.channels), dtype=np.float32))
    values, origin, cell = rec.decode_occupancy_grid(models.shape_vae, z, resolution=8)
    assert values.shape == (8, 8, 8)
    for axis in range(3):
        sl = [slice(None)] * 3
        for edge in (0, -1):
            sl[axis] = edge
            assert np.all(values[tuple(sl)] == 0.0)
    assert origin == (rec.GRID_LO,) * 3
    assert cell == pytest.approx((rec.GRID_HI - rec.GRID_LO) / 7)


def test_evaluate_split_deterministic(trained):
    summary1 = rec.evaluate_split(trained, "train")
    csv1 = (np.char.add("", open(summary1["csv"], "rb").read().decode()))
    first = open(summary1["csv"], "rb").read()
    summary2 = rec.evaluate_split(trained, "train")
    second = open(summary2["csv"], "rb").read()
    assert first == second
    assert 0.0 <= summary1["beat_baseline_fraction"] <= 1.0


def test_evaluate_outputs_well_formed(trained):
    from pathlib import Path
    csv_path = Path(trained.out_dir) / "metrics_train.csv"
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "sequence,frame,iou,chamfer,corr"
    # 3 frames plus a mean row per sequence, 4 sequences
    assert len(lines) == 1 + 4 * 4
    mean_rows = [l for l in lines if ",mean," in l]
    assert len(mean_rows) == 4
    for line in lines[1:]:
        parts = line.split(",")
        assert len(parts) == 5
        for v in parts[2:]:
            float(v)
            assert len(v.split(".")[1]) == 6
    base = Path(trained.out_dir) / "baseline_train.csv"
    assert base.read_text().splitlines()[0] == "sequence,frame,chamfer,corr"


# -- CLI ---------------------------------------------------------------------


def test_cli_synth_and_exit_codes(tmp_path):
    runner = CliRunner()
    res = runner.invoke(cli_main, ["synth", "--out", str(tmp_path / "d"),
                                   "--config", str(tmp_path / "missing.yaml")])
    assert res.exit_code == 2  # config path does not exist

    cfg = load_config(None)
    cfg.frames = 2
    cfg.train_per_family = 1
    cfg_path = tmp_path / "tiny.yaml"
    save_config(cfg_path, cfg)
    res = runner.invoke(cli_main, ["synth", "--config", str(cfg_path),
                                   "--out", str(tmp_path / "d")])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "d" / "manifest.json").is_file()


def test_cli_rejects_unknown_config_key(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("training:\n  learning_rate: 0.001\n")
    runner = CliRunner()
    res = runner.invoke(cli_main, ["train-shape-vae", "--config", str(bad)])
    assert res.exit_code == 2


def test_cli_train_without_dataset(tmp_path):
    cfg = load_config(None)
    cfg.dataset_dir = str(tmp_path / "nowhere")
    cfg.out_dir = str(tmp_path / "out")
    cfg_path = tmp_path / "c.yaml"
    save_config(cfg_path, cfg)
    runner = CliRunner()
    res = runner.invoke(cli_main, ["train-shape-vae", "--config", str(cfg_path)])
    assert res.exit_code == 2


def test_cli_diffusion_without_vae(dataset, tmp_path):
    cfg = tiny_cfg(dataset, tmp_path / "out")
    cfg_path = tmp_path / "c.yaml"
    save_config(cfg_path, cfg)
    runner = CliRunner()
    res = runner.invoke(cli_main, ["train-shape-diff", "--config", str(cfg_path)])
    assert res.exit_code == 2


def test_cli_nan_abort_exit_code(dataset, tmp_path, monkeypatch):
    cfg = tiny_cfg(dataset, tmp_path / "out")
    cfg.shape_vae_steps = 5
    cfg_path = tmp_path / "c.yaml"
    save_config(cfg_path, cfg)

    def nan_loss(*a, **k):
        return (Tensor(np.array(np.nan, dtype=np.float32)),
                Tensor(np.array(0.0, dtype=np.float32)),
                Tensor(np.array(0.0, dtype=np.float32)))

    monkeypatch.setattr(training, "shape_vae_loss", nan_loss)
    runner = CliRunner()
    res = runner.invoke(cli_main, ["train-shape-vae", "--config", str(cfg_path)])
    assert res.exit_code == 3


def test_cli_reconstruct_unknown_sequence(trained, tmp_path):
    cfg_path = tmp_path / "c.yaml"
    save_config(cfg_path, trained)
    runner = CliRunner()
    res = runner.invoke(cli_main, ["reconstruct", "--config", str(cfg_path),
                                   "--sequence", "missing-seq"])
    assert res.exit_code == 2


def test_cli_reconstruct_writes_frames(trained, tmp_path):
    from pathlib import Path
    man = load_manifest(trained.dataset_dir)
    name = sequences_in_split(man, "train")[0]["name"]
    cfg_path = tmp_path / "c.yaml"
    save_config(cfg_path, trained)
    runner = CliRunner()
    res = runner.invoke(cli_main, ["reconstruct", "--config", str(cfg_path),
                                   "--sequence", name])
    assert res.exit_code == 0, res.output
    frames = sorted((Path(trained.out_dir) / "recon" / name).glob("frame_*.obj"))
    assert len(frames) == 3
