import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhrn import gradcheck, nn
from dhrn.errors import CorruptCheckpoint, InvalidConfig, ShapeMismatch, StaleCache, VersionMismatch
from dhrn.model import (
    DhrbConfig,
    DhrnConfig,
    Mode,
    build_dhrn,
    dhrb_backward,
    dhrb_forward,
    load_checkpoint,
    model_backward,
    model_forward,
    save_checkpoint,
)
from oracles import closed_form_parameter_count

SMALL = DhrnConfig(input_len=128, width_multiplier=0.125)


def block(in_c, out_c, stride, seed=0, identity="drop"):
    model = build_dhrn(DhrnConfig(input_len=64, stem_channels=in_c, group_channels=(out_c,),
                                  group_strides=(stride,), blocks_per_group=1, identity=identity),
                       seed=seed, dtype=np.float64)
    return model.groups[0][0]


def composed_block(x, b, train):
    """The block written out op by op."""
    h, _ = nn.conv1d_forward(x, b.conv1)
    h, _ = nn.batchnorm_forward(h, b.bn1, train)
    h = nn.relu_forward(h)
    h, _ = nn.conv1d_forward(h, b.conv2)
    main, _ = nn.batchnorm_forward(h, b.bn2, train)
    p, _ = nn.conv1d_forward(x, b.proj)
    short, _ = nn.batchnorm_forward(p, b.proj_bn, train)
    s = main + short
    if b.cfg.keeps_shape:
        s = s + x
    return nn.relu_forward(s)


class TestBlock:
    def test_zero_weights_give_relu_of_input(self):
        b = block(4, 4, 1)
        for conv in (b.conv1, b.conv2, b.proj):
            conv.weight[:] = 0
        x = np.random.default_rng(0).standard_normal((2, 4, 20))
        y, _ = dhrb_forward(x, b, Mode.EVAL)
        assert np.allclose(y, np.maximum(x, 0), atol=0)

    def test_stride_two_shape(self):
        b = block(64, 128, 2)
        for L in (37, 38):
            y, _ = dhrb_forward(np.zeros((1, 64, L)), b, Mode.EVAL)
            assert y.shape == (1, 128, -(-L // 2))

    @pytest.mark.parametrize("shape", [(4, 4, 1), (4, 8, 2), (3, 6, 1)])
    @pytest.mark.parametrize("mode", [Mode.TRAIN, Mode.EVAL])
    def test_composition_oracle_bit_identical(self, shape, mode):
        b = block(*shape, seed=3)
        x = np.random.default_rng(1).standard_normal((3, shape[0], 25))
        ref = composed_block(x, b, mode is Mode.TRAIN)
        y, _ = dhrb_forward(x, b, mode)
        assert np.array_equal(y, ref)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeMismatch):
            dhrb_forward(np.zeros((1, 3, 20)), block(4, 4, 1), Mode.EVAL)

    @pytest.mark.parametrize("identity", ["drop", "pad"])
    @pytest.mark.parametrize("shape", [(3, 3, 1), (2, 4, 2)])
    def test_block_finite_differences(self, identity, shape):
        rng = np.random.default_rng(7)
        b = block(*shape, seed=2, identity=identity)
        x = rng.standard_normal((2, shape[0], 19))
        y, cache = dhrb_forward(x, b, Mode.TRAIN)
        g = rng.standard_normal(y.shape)
        gx, grads = dhrb_backward(b, cache, g)
        f = lambda: float(np.sum(g * dhrb_forward(x, b, Mode.TRAIN)[0]))
        idx = list(rng.choice(x.size, 30, replace=False))
        assert gradcheck.rel_error(gx.reshape(-1)[idx], gradcheck.numeric_grad(f, x, idx=idx)) <= 1e-4
        assert gradcheck.rel_error(grads["proj.weight"], gradcheck.numeric_grad(f, b.proj.weight)) <= 1e-4

    def test_bad_block_config(self):
        with pytest.raises(InvalidConfig):
            DhrbConfig(4, 4, stride=3)


class TestNetwork:
    def test_depth_is_eighteen(self):
        model = build_dhrn(DhrnConfig(input_len=1024), seed=0)
        layers = model.main_path_layers()
        assert len(layers) == 1 + 4 * 2 * 2 + 1 == 18
        assert len(set(layers)) == 18

    def test_parameter_count(self):
        model = build_dhrn(DhrnConfig(input_len=1024), seed=0)
        assert model.num_parameters() == closed_form_parameter_count() == 28_459_398

    def test_width_scaling(self):
        model = build_dhrn(SMALL, seed=0)
        assert [g[0].cfg.out_channels for g in model.groups] == [8, 16, 32, 64]
        assert SMALL.pooled_dim == 64
        assert model.head_intensity.weight.shape == (4, 64)

    def test_forward_shapes(self):
        model = build_dhrn(DhrnConfig(input_len=1024, width_multiplier=0.125), seed=0)
        lb, la, cache = model_forward(model, np.zeros((4, 1, 1024), np.float32), Mode.EVAL)
        assert lb.shape == (4, 4) and la.shape == (4, 2) and cache is None

    def test_zero_heads(self):
        model = build_dhrn(SMALL, seed=0)
        for h in (model.head_intensity, model.head_detection):
            h.weight[:] = 0
            h.bias[:] = 0
        x = np.random.default_rng(0).standard_normal((3, 1, 128))
        lb, la, _ = model_forward(model, x, Mode.EVAL)
        assert not lb.any() and not la.any()
        assert np.allclose(nn.softmax(lb), 0.25)

    def test_eval_is_pure_and_rowwise(self):
        model = build_dhrn(SMALL, seed=1)
        before = model.snapshot()
        x = np.repeat(np.random.default_rng(0).standard_normal((1, 1, 128)), 4, axis=0)
        lb, la, _ = model_forward(model, x, Mode.EVAL)
        assert np.all(lb == lb[0]) and np.all(la == la[0])
        lb2, _, _ = model_forward(model, x, Mode.EVAL)
        assert np.array_equal(lb, lb2)
        assert all(np.array_equal(before[k], v) for k, v in model.state().items())

    def test_train_updates_running_stats(self):
        model = build_dhrn(SMALL, seed=1)
        model_forward(model, np.random.default_rng(0).standard_normal((2, 1, 128)), Mode.TRAIN)
        assert model.stem_bn.running_mean.any()

    def test_bad_input_shape(self):
        with pytest.raises(ShapeMismatch):
            model_forward(build_dhrn(SMALL), np.zeros((1, 1, 127)))

    def test_too_short_input(self):
        with pytest.raises(InvalidConfig):
            DhrnConfig(input_len=2)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(3, 300), st.sampled_from([1, 2]))
    def test_trunk_length_walker(self, L, stem_stride):
        if -(-L // stem_stride) < 3:
            # stem output shorter than the max-pool kernel
            with pytest.raises(InvalidConfig):
                DhrnConfig(input_len=L, width_multiplier=0.0625, stem_stride=stem_stride)
            return
        cfg = DhrnConfig(input_len=L, width_multiplier=0.0625, stem_stride=stem_stride)
        model = build_dhrn(cfg, seed=0, dtype=np.float64)
        # walk the real layers and record the length before the global pool
        h, _ = nn.conv1d_forward(np.zeros((1, 1, L)), model.stem)
        h, _ = nn.maxpool1d_forward(h, cfg.pool_kernel, cfg.pool_stride)
        for blocks in model.groups:
            for b in blocks:
                h, _ = dhrb_forward(h, b, Mode.EVAL)
        assert h.shape[2] == cfg.trunk_length()


class TestBackward:
    def _setup(self, seed=0):
        model = build_dhrn(gradcheck.TINY, seed=seed, dtype=np.float64)
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((4, 1, gradcheck.TINY.input_len))
        lb, la, cache = model_forward(model, x, Mode.TRAIN)
        gb = nn.cross_entropy(lb, rng.integers(0, 4, 4))[1]
        ga = nn.cross_entropy(la, rng.integers(0, 2, 4))[1]
        return model, cache, gb, ga

    def test_multitask_decomposition(self):
        model, cache, gb, ga = self._setup()
        both = model_backward(model, cache, gb, ga)
        only_b = model_backward(model, cache, gb, np.zeros_like(ga))
        only_a = model_backward(model, cache, np.zeros_like(gb), ga)
        for name in both:
            if name.startswith("head_"):
                continue
            assert np.max(np.abs(both[name] - (only_b[name] + only_a[name]))) <= 1e-12
        assert not only_b["head_detection.weight"].any() and not only_b["head_detection.bias"].any()

    def test_zero_head_grads(self):
        model, cache, gb, ga = self._setup()
        grads = model_backward(model, cache, np.zeros_like(gb), np.zeros_like(ga))
        assert set(grads) == set(model.parameters())
        assert all(not g.any() for g in grads.values())

    @pytest.mark.parametrize("seed", range(3))
    def test_tiny_model_finite_differences(self, seed):
        assert gradcheck.check_tiny_model(seed) <= 1e-4

    def test_stale_cache(self):
        model, cache, gb, ga = self._setup()
        model.version += 1
        with pytest.raises(StaleCache):
            model_backward(model, cache, gb, ga)
        other = build_dhrn(gradcheck.TINY, seed=0, dtype=np.float64)
        with pytest.raises(StaleCache):
            model_backward(other, cache, gb, ga)
        with pytest.raises(StaleCache):
            model_backward(model, None, gb, ga)

    def test_load_state_invalidates_cache(self):
        model, cache, gb, ga = self._setup()
        model.load_state(model.snapshot())
        with pytest.raises(StaleCache):
            model_backward(model, cache, gb, ga)


class TestCheckpoint:
    def test_roundtrip_bytes(self, tmp_path):
        model = build_dhrn(SMALL, seed=4)
        save_checkpoint(model, tmp_path / "a.dhrn")
        back = load_checkpoint(tmp_path / "a.dhrn")
        save_checkpoint(back, tmp_path / "b.dhrn")
        assert (tmp_path / "a.dhrn").read_bytes() == (tmp_path / "b.dhrn").read_bytes()
        x = np.random.default_rng(0).standard_normal((2, 1, 128)).astype(np.float32)
        assert np.array_equal(model_forward(model, x)[0], model_forward(back, x)[0])

    def test_truncated(self, tmp_path):
        save_checkpoint(build_dhrn(SMALL), tmp_path / "a.dhrn")
        data = (tmp_path / "a.dhrn").read_bytes()
        for cut in (3, 10, len(data) // 2, len(data) - 1):
            (tmp_path / "t.dhrn").write_bytes(data[:cut])
            with pytest.raises(CorruptCheckpoint):
                load_checkpoint(tmp_path / "t.dhrn")
        (tmp_path / "t.dhrn").write_bytes(data + b"\0")
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(tmp_path / "t.dhrn")
        (tmp_path / "t.dhrn").write_bytes(b"XXXX" + data[4:])
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(tmp_path / "t.dhrn")

    def test_width_mismatch(self, tmp_path):
        save_checkpoint(build_dhrn(SMALL), tmp_path / "a.dhrn")
        with pytest.raises(VersionMismatch):
            load_checkpoint(tmp_path / "a.dhrn", expected=DhrnConfig(input_len=128, width_multiplier=1.0))

    def test_shape_audit(self):
        model = build_dhrn(SMALL)
        wide = build_dhrn(DhrnConfig(input_len=128, width_multiplier=0.25))
        with pytest.raises(VersionMismatch):
            model.load_state(wide.state())

    def test_config_json_roundtrip(self):
        assert DhrnConfig.from_json(SMALL.to_json()) == SMALL
        with pytest.raises(InvalidConfig):
            DhrnConfig.from_json({"input_len": 10, "bogus": 1})
