import numpy as np
import pytest

from mvgen import tokenizer as tok
from mvgen.numerics import (
    ContractError,
    NumericError,
    OptimizerConfig,
    Tensor,
    as_tensor,
    stop_gradient,
)


@pytest.fixture()
def tiny_model():
    cfg = tok.TokenizerConfig(resolution=8, schedule=(1, 2), vocab_size=8,
                              embed_dim=4, dtype="float64")
    return tok.TokenizerModel.create(cfg, seed=3)


@pytest.fixture()
def desk_model():
    return tok.TokenizerModel.create(tok.TokenizerConfig(dtype="float64"), seed=1)


class TestScaleSchedule:
    def test_paper_schedule_token_count(self):
        assert tok.PAPER_SCHEDULE.token_count == 680

    def test_desk_schedule_token_count(self):
        assert tok.DESK_SCHEDULE.token_count == 30

    @pytest.mark.parametrize("sizes,count", [
        ((1,), 1), ((1, 2), 5), ((1, 2, 3), 14), ((2, 4, 8), 84),
        ((1, 3, 9), 91), ((1, 2, 3, 4, 5), 55),
    ])
    def test_token_count_family(self, sizes, count):
        assert tok.ScaleSchedule(sizes).token_count == count
        assert tok.ScaleSchedule(sizes).token_count == sum(n * n for n in sizes)

    def test_rejects_non_increasing(self):
        with pytest.raises(ContractError):
            tok.ScaleSchedule((1, 2, 2))

    def test_position_slices_partition(self):
        slices = tok.ScaleSchedule((1, 2, 3)).position_slices()
        assert [s.stop - s.start for s in slices] == [1, 4, 9]
        assert slices[-1].stop == 14


class TestInterpolate:
    def test_identity(self):
        grid = np.random.default_rng(0).normal(size=(3, 3, 2))
        out = tok.interpolate(grid, 3)
        assert out is grid

    def test_constant_preserved(self):
        grid = np.full((2, 2, 5), 1.25)
        assert np.allclose(tok.interpolate(grid, 7), 1.25)

    def test_two_by_two_average(self):
        grid = np.array([[0.0, 0.0], [1.0, 1.0]])[:, :, None]
        out = tok.interpolate(grid, 1)
        assert out[0, 0, 0] == pytest.approx(0.5)


class TestQuantize:
    def cb(self, rows):
        rows = np.asarray(rows, dtype=np.float64)
        return tok.Codebook(embeddings=rows, ema_counts=np.zeros(len(rows)),
                            ema_sums=np.zeros_like(rows))

    def test_nearest(self):
        cb = self.cb([[0.0, 0.0], [1.0, 1.0]])
        assert tok.quantize(np.array([0.2, 0.1]), cb) == 0

    def test_tie_breaks_low_index(self):
        cb = self.cb([[0.0, 0.0], [1.0, 1.0]])
        assert tok.quantize(np.array([0.5, 0.5]), cb) == 0

    def test_exact_row_match(self):
        rows = np.random.default_rng(1).normal(size=(6, 3))
        cb = self.cb(rows)
        for j in range(6):
            assert tok.quantize(rows[j], cb) == j

    def test_nan_rejected(self):
        cb = self.cb([[0.0], [1.0]])
        with pytest.raises(NumericError):
            tok.quantize(np.array([np.nan]), cb)

    def test_grid_quantize_matches_scalar(self):
        rng = np.random.default_rng(2)
        emb = rng.normal(size=(5, 3))
        cb = self.cb(emb)
        feats = rng.normal(size=(2, 3, 4, 4))
        grid = tok._quantize_grid(feats, emb)
        for b in range(2):
            for y in range(4):
                for x in range(4):
                    assert grid[b, y, x] == tok.quantize(feats[b, :, y, x], cb)


class TestEncodeDecode:
    def test_shapes_and_range_on_untrained_model(self, desk_model):
        rng = np.random.default_rng(0)
        images = rng.random((3, 32, 32))
        grids = tok.encode_batch(desk_model, images)
        assert [g.shape for g in grids] == [(3, 1, 1), (3, 2, 2), (3, 3, 3), (3, 4, 4)]
        recon = tok.decode_batch(desk_model, grids)
        assert recon.shape == (3, 32, 32)
        assert recon.min() >= 0.0 and recon.max() <= 1.0

    def test_single_scale_exact_codebook_gives_zero_residual(self):
        cfg = tok.TokenizerConfig(resolution=8, schedule=(4,), vocab_size=16,
                                  embed_dim=4, dtype="float64")
        model = tok.TokenizerModel.create(cfg, seed=0)
        rng = np.random.default_rng(3)
        image = rng.random((8, 8))
        with tok.no_grad():
            latent = model.encoder_forward(as_tensor(image[None, None])).values
        cells = latent[0].transpose(1, 2, 0).reshape(-1, 4)
        model.codebook.embeddings = cells.copy()  # codebook = exact latents
        pyramid = tok.encode(image, model)
        looked_up = model.codebook.embeddings[pyramid.grids[0]].transpose(2, 0, 1)
        assert np.allclose(looked_up, latent[0], atol=1e-12)

    def test_encode_rejects_wrong_resolution(self, desk_model):
        with pytest.raises(ContractError):
            tok.encode(np.zeros((16, 16)), desk_model)

    def test_decode_rejects_out_of_range_index(self, desk_model):
        grids = [np.zeros((n, n), dtype=np.int64) for n in (1, 2, 3, 4)]
        grids[1][0, 0] = 64
        with pytest.raises(ContractError):
            tok.decode(tok.TokenPyramid(tuple(grids)), desk_model)

    def test_constant_index_decode_deterministic(self, desk_model):
        grids = tuple(np.full((n, n), 5, dtype=np.int64) for n in (1, 2, 3, 4))
        a = tok.decode(tok.TokenPyramid(grids), desk_model)
        b = tok.decode(tok.TokenPyramid(grids), desk_model)
        assert a.tobytes() == b.tobytes()

    def test_decode_sensitive_to_scale_assignment(self, desk_model):
        # constant grids with indices swapped between two scales must differ
        a = tuple(np.full((n, n), 3 if k != 1 else 9, dtype=np.int64)
                  for k, n in enumerate((1, 2, 3, 4)))
        b = tuple(np.full((n, n), 3 if k != 2 else 9, dtype=np.int64)
                  for k, n in enumerate((1, 2, 3, 4)))
        out_a = tok.decode(tok.TokenPyramid(a), desk_model)
        out_b = tok.decode(tok.TokenPyramid(b), desk_model)
        assert not np.array_equal(out_a, out_b)

    def test_roundtrip_encode_decode_pyramid_shapes(self, tiny_model):
        image = np.random.default_rng(1).random((8, 8))
        pyramid = tok.encode(image, tiny_model)
        assert pyramid.sizes == (1, 2)
        assert all(g.max() < 8 for g in pyramid.grids)


class TestStraightThrough:
    def test_gradient_passes_through_quantization(self):
        # d loss(x + sg(q - x)) / dx equals the gradient with the quantizer
        # replaced by the identity map
        rng = np.random.default_rng(0)
        x_val = rng.normal(size=(3,))
        q_val = rng.normal(size=(3,))
        w = rng.normal(size=(3,))

        x = Tensor(x_val.copy(), requires_grad=True)
        st = x + stop_gradient(as_tensor(q_val) - x)
        (st * as_tensor(w)).sum().backward()
        assert np.allclose(x.grad, w)

    def test_training_graph_gradients_flow_to_encoder(self, tiny_model):
        rng = np.random.default_rng(4)
        batch = rng.random((2, 8, 8))
        loss, _ = tok.training_graph(tiny_model, batch)
        loss.backward()
        enc_grad = tiny_model.params["enc0.w"].grad
        assert enc_grad is not None and np.abs(enc_grad).max() > 0


class TestTraining:
    def test_loss_decreases(self, tiny_model):
        rng = np.random.default_rng(5)
        images = rng.random((32, 8, 8)) * 0.5 + 0.25
        opt = OptimizerConfig(peak_lr=3e-3, warmup_steps=10, total_steps=120)
        curve = tok.train_tokenizer(images, tiny_model, opt, steps=120,
                                    batch_size=8, seed=1, log_every=10)
        assert curve[-1][2] < curve[0][2]

    def test_ema_decay_one_freezes_codebook(self):
        cfg = tok.TokenizerConfig(resolution=8, schedule=(1, 2), vocab_size=8,
                                  embed_dim=4, ema_decay=1.0, dtype="float64")
        model = tok.TokenizerModel.create(cfg, seed=3)
        before = model.codebook.embeddings.copy()
        rng = np.random.default_rng(6)
        images = rng.random((16, 8, 8))
        opt = OptimizerConfig(peak_lr=1e-3, warmup_steps=2, total_steps=20)
        tok.train_tokenizer(images, model, opt, steps=10, batch_size=4, seed=1,
                            warm_start=False)
        assert np.array_equal(model.codebook.embeddings, before)

    def test_empty_corpus_rejected(self, tiny_model):
        opt = OptimizerConfig(peak_lr=1e-3, warmup_steps=1, total_steps=5)
        with pytest.raises(ContractError):
            tok.train_tokenizer(np.zeros((0, 8, 8)), tiny_model, opt, steps=1)

    def test_dead_code_reseeding_revives(self, tiny_model):
        rng = np.random.default_rng(7)
        images = rng.random((16, 8, 8))
        tiny_model.codebook.embeddings[5] = 1e6  # a code nothing will select
        opt = OptimizerConfig(peak_lr=1e-3, warmup_steps=10, total_steps=1200)
        tok.train_tokenizer(images, tiny_model, opt, steps=1002, batch_size=4,
                            seed=2, warm_start=False, log_every=500)
        assert np.abs(tiny_model.codebook.embeddings[5]).max() < 1e3


class TestCodebookUsage:
    def test_single_token_histogram(self):
        cfg = tok.TokenizerConfig(resolution=2, schedule=(1,), vocab_size=8,
                                  embed_dim=4, dtype="float64")
        model = tok.TokenizerModel.create(cfg, seed=2)
        hist, util, heatmap = tok.codebook_usage(model, np.random.default_rng(0).random((1, 2, 2)))
        assert np.count_nonzero(hist) == 1
        assert util == pytest.approx(1 / 8)
        assert heatmap.shape == (3, 3)

    def test_histogram_sums_to_one(self, desk_model):
        images = np.random.default_rng(1).random((5, 32, 32))
        hist, _, _ = tok.codebook_usage(desk_model, images)
        assert hist.sum() == pytest.approx(1.0, abs=1e-12)

    def test_empty_set_rejected(self, desk_model):
        with pytest.raises(ContractError):
            tok.codebook_usage(desk_model, np.zeros((0, 32, 32)))


class TestTokenStream:
    def test_bit_exact_roundtrip(self, tmp_path):
        rng = np.random.default_rng(8)
        pyramid = tok.TokenPyramid(tuple(rng.integers(0, 64, size=(n, n))
                                         for n in (1, 2, 3, 4)))
        path = tmp_path / "tokens.mvtk"
        tok.write_token_stream(path, pyramid, 64)
        back, vocab = tok.read_token_stream(path)
        assert vocab == 64
        assert all(np.array_equal(a, b) for a, b in zip(back.grids, pyramid.grids))
        # byte-for-byte stable
        assert tok.tokens_to_bytes(back, vocab) == path.read_bytes()

    def test_magic_and_layout(self):
        pyramid = tok.TokenPyramid((np.array([[7]]),))
        blob = tok.tokens_to_bytes(pyramid, 16)
        assert blob[:4] == b"MVTK"
        assert int.from_bytes(blob[4:8], "little") == 1  # version
        assert int.from_bytes(blob[8:12], "little") == 1  # K
        assert int.from_bytes(blob[12:16], "little") == 1  # n_1
        assert int.from_bytes(blob[16:20], "little") == 16  # V
        assert int.from_bytes(blob[20:22], "little") == 7  # index

    def test_out_of_range_index_rejected(self):
        pyramid = tok.TokenPyramid((np.array([[9]]),))
        with pytest.raises(ContractError):
            tok.tokens_to_bytes(pyramid, 8)


class TestCheckpoint:
    def test_roundtrip_preserves_weights_exactly_float32(self, tmp_path):
        cfg = tok.TokenizerConfig(dtype="float32")
        model = tok.TokenizerModel.create(cfg, seed=9)
        path = tmp_path / "tok.mvckpt"
        tok.save_tokenizer(path, model, train_step=17, optimizer_state=True)
        loaded, config = tok.load_tokenizer(path)
        assert config["train_step"] == 17
        for name, p in model.params.items():
            assert np.array_equal(loaded.params[name].values, p.values)
        assert np.array_equal(loaded.codebook.embeddings, model.codebook.embeddings)

    def test_encode_matches_after_roundtrip(self, tmp_path):
        cfg = tok.TokenizerConfig(dtype="float32")
        model = tok.TokenizerModel.create(cfg, seed=10)
        path = tmp_path / "tok.mvckpt"
        tok.save_tokenizer(path, model)
        loaded, _ = tok.load_tokenizer(path)
        image = np.random.default_rng(2).random((32, 32)).astype(np.float32)
        a = tok.encode(image, model)
        b = tok.encode(image, loaded)
        assert all(np.array_equal(x, y) for x, y in zip(a.grids, b.grids))

    def test_wrong_kind_rejected(self, tmp_path):
        from mvgen import checkpoint as ckpt
        path = tmp_path / "bad.mvckpt"
        ckpt.write_checkpoint(path, {"kind": "prior"}, {"x": np.zeros(2)})
        with pytest.raises(ValueError):
            tok.load_tokenizer(path)


def test_paper_config_is_constructible():
    cfg = tok.paper_config()
    assert cfg.scale_schedule.token_count == 680
    assert cfg.num_stages == 4  # 256 -> 16 is a factor-16 downsample
    assert cfg.stage_widths() == [32, 64, 64, 32]
