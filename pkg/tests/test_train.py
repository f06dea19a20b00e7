import statistics

import numpy as np
import pytest

from cqfield.acceptance import RECON_SEEDS, reconstruction_run
from cqfield.field import init_params, save_checkpoint
from cqfield.train import (AdamState, ConfigError, RayTable, TrainConfig, adam_update, coerce_items, load_config,
                           parse_config_text, resolve_holdout, sample_ray_batch, stream, train, train_step)

TINY = dict(geo_layers=1, geo_width=8, feature_dim=4, color_layers=1, color_width=8, pos_freqs=2, dir_freqs=1)


def test_config_text_parsing():
    vals = parse_config_text("""
        # comment
        train.iterations = 12
        encoding.mode = continuous   # trailing
        render.background = 0.1,0.2,0.3
        render.mode = continuous
    """)
    assert vals == {"iterations": 12, "mode": "continuous", "background": (0.1, 0.2, 0.3)}


def test_unknown_config_key_named():
    with pytest.raises(ConfigError, match="train.bogus"):
        parse_config_text("train.bogus = 3")


def test_bad_config_value():
    with pytest.raises(ConfigError, match="train.iterations"):
        coerce_items({"train.iterations": "many"})
    with pytest.raises(ConfigError):
        parse_config_text("no equals sign here")


def test_flags_override_config_file(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("train.iterations=7\ngrid.resolution=32\n")
    cfg = load_config(p, {"grid_resolution": 64})
    assert cfg.iterations == 7 and cfg.grid_resolution == 64


@pytest.mark.parametrize("bad", [dict(samples_per_ray=1), dict(batch_rays=0), dict(adam_beta1=1.0),
                                 dict(mode="nearest"), dict(compositing="sdf"), dict(iterations=-1)])
def test_invalid_configs(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_config_text_round_trip():
    cfg = TrainConfig(iterations=3, mode="mixed_pe_continuous", background=(1, 1, 1), init_prior=0.3)
    assert load_config(None, parse_config_text(cfg.to_text())) == cfg


def test_adam_matches_hand_stepped_oracle():
    # minimise f(x) = (x - 3)^2 from x = 0
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    x = np.array([0.0])
    st = AdamState.zeros(1)
    m = v = 0.0
    xo = 0.0
    for t in range(1, 6):
        adam_update(x, 2 * (x - 3.0), st, lr, b1, b2, eps)
        g = 2 * (xo - 3.0)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        xo -= lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
        assert x[0] == pytest.approx(xo, rel=1e-14)
    assert st.step == 5


def test_batches_are_reproducible(small_dataset):
    table = RayTable.from_dataset(small_dataset)
    a = sample_ray_batch(table, 64, stream(3, 1, 9))
    b = sample_ray_batch(table, 64, stream(3, 1, 9))
    c = sample_ray_batch(table, 64, stream(3, 1, 10))
    assert np.array_equal(a.pixel, b.pixel) and np.array_equal(a.view, b.view)
    assert not np.array_equal(a.pixel, c.pixel)


def test_batch_colors_are_exact_pixels(small_dataset):
    b = sample_ray_batch(small_dataset, 100, np.random.default_rng(0))
    for v, p, c in zip(b.view, b.pixel, b.colors):
        img = small_dataset.image_float(v).reshape(-1, 3)
        assert np.array_equal(img[p], c)


def test_view_frequencies_are_uniform(small_dataset):
    b = sample_ray_batch(small_dataset, 100_000, np.random.default_rng(1))
    counts = np.bincount(b.view, minlength=8)
    n, p = 100_000, 1 / 8
    assert np.all(np.abs(counts - n * p) <= 3 * np.sqrt(n * p * (1 - p)))


def test_holdout_view_never_sampled(small_dataset):
    cfg = TrainConfig(holdout_view=2)
    h = resolve_holdout(small_dataset, cfg)
    table = RayTable.from_dataset(small_dataset, [v for v in range(8) if v != h])
    assert 2 not in set(sample_ray_batch(table, 5000, np.random.default_rng(0)).view.tolist())
    with pytest.raises(ConfigError):
        resolve_holdout(small_dataset, TrainConfig(holdout_view=8))


def test_zero_gradient_batch_leaves_params(small_dataset):
    cfg = TrainConfig(batch_rays=8, samples_per_ray=8, **TINY)
    params = init_params(0, cfg.architecture)
    renderer = cfg.renderer(small_dataset.scene.background)
    batch = sample_ray_batch(small_dataset, 8, np.random.default_rng(0))
    batch.colors = renderer.render(params, batch.origins, batch.dirs, np.random.default_rng(5)).color
    adam = AdamState.zeros(len(params.values))
    before = params.values.copy()
    loss = train_step(params, adam, batch, cfg, renderer, np.random.default_rng(5))
    assert loss == 0.0
    assert np.array_equal(params.values, before)
    assert adam.step == 1


def test_zero_iterations_returns_initial_params(small_dataset, tmp_path):
    cfg = TrainConfig(iterations=0, **TINY)
    params, log = train(small_dataset, cfg, tmp_path)
    assert np.array_equal(params.values, init_params(cfg.seed, cfg.architecture).values)
    assert (tmp_path / "checkpoint.bin").exists()
    assert log.rows == []


def test_training_is_bit_reproducible(small_dataset, tmp_path):
    cfg = TrainConfig(iterations=15, batch_rays=16, samples_per_ray=8, grid_resolution=32, log_every=5, **TINY)
    a, la = train(small_dataset, cfg)
    b, lb = train(small_dataset, cfg)
    assert np.array_equal(a.values, b.values)
    assert la.rows == lb.rows
    save_checkpoint(tmp_path / "a.bin", a)
    save_checkpoint(tmp_path / "b.bin", b)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_modes_share_ray_streams(small_dataset):
    seen = {}
    for mode in ("continuous", "discrete"):
        cfg = TrainConfig(iterations=3, batch_rays=8, samples_per_ray=8, mode=mode, **TINY)
        picks = []
        train(small_dataset, cfg, callback=lambda it, p: picks.append(
            sample_ray_batch(small_dataset, 8, stream(cfg.seed, 1, it)).pixel.tolist()))
        seen[mode] = picks
    assert seen["continuous"] == seen["discrete"]


def test_train_log_csv(small_dataset, tmp_path):
    cfg = TrainConfig(iterations=4, batch_rays=8, samples_per_ray=8, log_every=2, **TINY)
    train(small_dataset, cfg, tmp_path)
    lines = (tmp_path / "train_log.csv").read_text().splitlines()
    assert lines[0] == "iter,loss,psnr_holdout"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["2", "4"]


@pytest.mark.slow
def test_loss_trend_decreases_over_500_iterations(monkeypatch):
    import cqfield.train as tr
    from cqfield.scene import default_dataset

    losses = []
    original = tr.train_step

    def recording(*args, **kwargs):
        losses.append(original(*args, **kwargs))
        return losses[-1]

    monkeypatch.setattr(tr, "train_step", recording)
    train(default_dataset(), TrainConfig(iterations=500, batch_rays=64, samples_per_ray=64, log_every=0,
                                         checkpoint_every=0))
    blocks = np.array(losses).reshape(10, 50).mean(axis=1)
    ranks = np.argsort(np.argsort(blocks))
    rho = statistics.correlation(list(range(10)), [float(r) for r in ranks])
    assert blocks[-1] < blocks[0], blocks
    assert rho < -0.8, blocks


@pytest.mark.slow
def test_discrete_psnr_not_worse_than_continuous():
    disc = statistics.median(reconstruction_run(s, 256)["psnr"] for s in RECON_SEEDS)
    cont = statistics.median(reconstruction_run(s, 256, "continuous")["psnr"] for s in RECON_SEEDS)
    print(f"median held-out PSNR: discrete {disc:.2f} dB, continuous {cont:.2f} dB")
    assert disc >= cont - 0.5
