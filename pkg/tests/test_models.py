"""Model-level tests: causality, weight sharing, checkpoints, decode caches."""

import json
import struct

import numpy as np
import pytest

from vmt.codec import END_ID, START_ID, VOCAB_SIZE
from vmt.models import (CHECKPOINT_MAGIC, ModelConfig, Seq2SeqModel, VmtModel,
                        build_model, load_checkpoint, param_count,
                        save_checkpoint)
from vmt.tensor import ShapeError, Tensor, new_rng


def reduced_vmt(**overrides) -> ModelConfig:
    base = dict(kind="vmt", hidden=64, enc_layers=2, dec_layers=2, heads=4,
                d_ff=256, dropout=0.1, max_target_len=64)
    base.update(overrides)
    return ModelConfig(**base)


def reduced_seq2seq(**overrides) -> ModelConfig:
    base = dict(kind="seq2seq", hidden=64, enc_layers=3, dec_layers=3, heads=4,
                d_ff=256, dropout=0.1, max_target_len=64)
    base.update(overrides)
    return ModelConfig(**base)


def frame_vecs(model, steps=6, seed=0):
    return Tensor(new_rng(seed).standard_normal(
        (1, steps, model.config.hidden)).astype(model.dtype))


class TestModelConfig:
    def test_full_presets(self):
        vmt = ModelConfig.vmt_full()
        assert (vmt.hidden, vmt.enc_layers, vmt.dec_layers) == (512, 6, 6)
        assert (vmt.heads, vmt.d_ff, vmt.dropout) == (8, 2048, 0.1)
        s2s = ModelConfig.seq2seq_full()
        assert (s2s.hidden, s2s.enc_layers, s2s.dec_layers) == (512, 3, 3)

    def test_defaults(self):
        cfg = ModelConfig()
        assert cfg.kind == "vmt"
        assert cfg.max_target_len == 1024
        assert cfg.cross_attention_mode == "standard"

    @pytest.mark.parametrize("bad", [
        dict(kind="lstm"),
        dict(cross_attention_mode="rotary"),
        dict(hidden=100),          # not divisible by 8
        dict(hidden=64, heads=5),  # not divisible by heads
        dict(enc_layers=0),
        dict(dropout=1.0),
        dict(dropout=-0.1),
        dict(max_target_len=0),
        dict(kind="seq2seq", enc_layers=2, dec_layers=3),
    ])
    def test_invalid_configs_rejected(self, bad):
        with pytest.raises(ValueError):
            reduced_vmt(**bad) if "kind" not in bad else ModelConfig(
                hidden=64, heads=4, d_ff=256, **bad)

    def test_dict_roundtrip(self):
        cfg = reduced_vmt(cross_attention_mode="paper_literal")
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError, match="unknown config fields"):
            ModelConfig.from_dict({"kind": "vmt", "window": 3})

    def test_kind_mismatch_rejected(self):
        with pytest.raises(ValueError, match="kind"):
            VmtModel(reduced_seq2seq())
        with pytest.raises(ValueError, match="kind"):
            Seq2SeqModel(reduced_vmt())


class TestParamAccounting:
    def test_vmt_reduced_count(self):
        # conv 18992 + embed 19840 + enc 2x49728 + dec 2x66240 + out 20150
        model = VmtModel(reduced_vmt())
        assert param_count(model) == 290918

    def test_seq2seq_reduced_count(self):
        # conv 18992 + embed 19840 + 3 shared cells x 24960
        # + attn 16384 + ctx 8256 + out 20150
        model = Seq2SeqModel(reduced_seq2seq())
        assert param_count(model) == 158502

    def test_names_unique_and_trainable(self):
        for model in (VmtModel(reduced_vmt()), Seq2SeqModel(reduced_seq2seq())):
            params = model.named_params()
            assert len(params) == len(set(params))
            assert all(p.requires_grad for p in params.values())

    def test_name_order_stable(self):
        a = list(VmtModel(reduced_vmt(), seed=0).named_params())
        b = list(VmtModel(reduced_vmt(), seed=5).named_params())
        assert a == b
        assert a[0] == "conv.0.kernel" and a[-1] == "out.b"

    def test_same_seed_same_weights(self):
        a = VmtModel(reduced_vmt(), seed=3).named_params()
        b = VmtModel(reduced_vmt(), seed=3).named_params()
        for name in a:
            np.testing.assert_array_equal(a[name].numpy(), b[name].numpy())

    def test_different_seed_different_weights(self):
        a = VmtModel(reduced_vmt(), seed=0)
        b = VmtModel(reduced_vmt(), seed=1)
        assert not np.array_equal(a.out_w.numpy(), b.out_w.numpy())


class TestVmtForward:
    def test_logit_shape(self):
        model = VmtModel(reduced_vmt(), dtype=np.float64)
        z = model.encode(frame_vecs(model))
        target = np.array([[START_ID, 5, 9, 300]])
        logits = model.decode(z, target)
        assert logits.shape == (1, 4, VOCAB_SIZE)

    def test_causal_decoder(self):
        # perturbing future tokens leaves earlier logits untouched
        model = VmtModel(reduced_vmt(), dtype=np.float64)
        z = model.encode(frame_vecs(model))
        base = np.array([[START_ID, 10, 20, 30, 40, 50, 60, 70]])
        logits = model.decode(z, base).numpy()
        cut = 4
        messed = base.copy()
        messed[0, cut:] = [200, 201, 202, 203]
        logits2 = model.decode(z, messed).numpy()
        np.testing.assert_allclose(logits[:, :cut], logits2[:, :cut], atol=1e-6)
        assert not np.allclose(logits[:, cut:], logits2[:, cut:])

    def test_eval_forward_deterministic(self):
        model = VmtModel(reduced_vmt())
        clips = Tensor(new_rng(1).standard_normal(
            (1, 3, 3, 16, 16)).astype(np.float32))
        target = np.array([[START_ID, 1, 2]])
        a = model.forward(clips, target).numpy()
        b = model.forward(clips, target).numpy()
        np.testing.assert_array_equal(a, b)

    def test_dropout_seeded(self):
        model = VmtModel(reduced_vmt(), dtype=np.float64)
        z_in = frame_vecs(model)
        target = np.array([[START_ID, 1, 2]])

        def run(seed):
            z = model.encode(z_in, train=True, rng=new_rng(seed))
            return model.decode(z, target, train=True, rng=new_rng(seed)).numpy()

        eval_logits = model.decode(model.encode(z_in), target).numpy()
        np.testing.assert_array_equal(run(7), run(7))
        assert not np.array_equal(run(7), run(8))
        assert not np.array_equal(run(7), eval_logits)

    def test_dropout_without_rng_rejected(self):
        model = VmtModel(reduced_vmt(), dtype=np.float64)
        with pytest.raises(ValueError, match="rng"):
            model.encode(frame_vecs(model), train=True)

    def test_zero_dropout_trains_without_rng(self):
        model = VmtModel(reduced_vmt(dropout=0.0), dtype=np.float64)
        out = model.encode(frame_vecs(model), train=True)
        assert out.shape == (1, 6, 64)

    def test_length_cap_enforced(self):
        model = VmtModel(reduced_vmt(max_target_len=4), dtype=np.float64)
        z = model.encode(frame_vecs(model))
        with pytest.raises(ShapeError, match="length"):
            model.decode(z, np.zeros((1, 6), dtype=np.int64))

    def test_position_matters(self):
        # identical frame vectors at different positions encode differently
        model = VmtModel(reduced_vmt(), dtype=np.float64)
        row = new_rng(2).standard_normal((1, 1, 64))
        vecs = Tensor(np.repeat(row, 4, axis=1))
        z = model.encode(vecs).numpy()
        assert not np.allclose(z[0, 0], z[0, 1])

    def test_cross_modes_differ(self):
        std = VmtModel(reduced_vmt(), seed=0, dtype=np.float64)
        lit = VmtModel(reduced_vmt(cross_attention_mode="paper_literal"),
                       seed=0, dtype=np.float64)
        target = np.array([[START_ID, 1, 2]])
        a = std.decode(std.encode(frame_vecs(std)), target).numpy()
        b = lit.decode(lit.encode(frame_vecs(lit)), target).numpy()
        assert a.shape == b.shape
        assert not np.allclose(a, b)

    def test_gradients_reach_all_params(self):
        model = VmtModel(reduced_vmt(dropout=0.0), dtype=np.float64)
        clips = Tensor(new_rng(3).standard_normal((1, 2, 3, 16, 16)))
        logits = model.forward(clips, np.array([[START_ID, 4]]))
        logits.sum().backward()
        for name, p in model.named_params().items():
            assert p.grad is not None, name
            assert np.any(p.grad != 0.0), name


class TestVmtIncremental:
    def test_matches_teacher_forced(self):
        model = VmtModel(reduced_vmt(), dtype=np.float64)
        z = model.encode(frame_vecs(model))
        tokens = [START_ID, 17, 250, 88, 309]
        full = model.decode(z, np.array([tokens])).numpy()[0]
        state = model.begin_decode(z)
        for i, tok in enumerate(tokens):
            step = model.decode_step(state, tok)
            np.testing.assert_allclose(step, full[i], atol=1e-9)

    def test_cache_position_advances(self):
        model = VmtModel(reduced_vmt(), dtype=np.float64)
        state = model.begin_decode(model.encode(frame_vecs(model)))
        assert state.pos == 0
        model.decode_step(state, START_ID)
        assert state.pos == 1

    def test_cache_overflow_rejected(self):
        model = VmtModel(reduced_vmt(max_target_len=2), dtype=np.float64)
        state = model.begin_decode(model.encode(frame_vecs(model)))
        for tok in (START_ID, 1, 2):
            model.decode_step(state, tok)
        with pytest.raises(ShapeError, match="full"):
            model.decode_step(state, 3)

    def test_paper_literal_incremental_matches(self):
        cfg = reduced_vmt(cross_attention_mode="paper_literal")
        model = VmtModel(cfg, dtype=np.float64)
        z = model.encode(frame_vecs(model))
        tokens = [START_ID, 100, 200]
        full = model.decode(z, np.array([tokens])).numpy()[0]
        state = model.begin_decode(z)
        for i, tok in enumerate(tokens):
            np.testing.assert_allclose(model.decode_step(state, tok), full[i],
                                       atol=1e-9)


class TestSeq2Seq:
    def test_logit_shape(self):
        model = Seq2SeqModel(reduced_seq2seq(), dtype=np.float64)
        enc_out, hs = model.encode(frame_vecs(model))
        assert enc_out.shape == (1, 6, 64)
        logits = model.decode(enc_out, hs, np.array([[START_ID, 3, 4]]))
        assert logits.shape == (1, 3, VOCAB_SIZE)

    def test_shared_stack_listed_once(self):
        model = Seq2SeqModel(reduced_seq2seq())
        gru_names = [n for n in model.named_params() if n.startswith("gru.")]
        assert len(gru_names) == 3 * 12

    def test_encoder_and_decoder_gradients_accumulate(self):
        # the shared cells see both passes, so one backward sums both paths
        model = Seq2SeqModel(reduced_seq2seq(dropout=0.0), dtype=np.float64)
        vecs = frame_vecs(model, steps=4)
        enc_out, hs = model.encode(vecs)
        enc_out.sum().backward()
        enc_only = model.cells[0].w_ir.grad.copy()

        for p in model.named_params().values():
            p.grad = None
        enc_out, hs = model.encode(vecs)
        logits = model.decode(enc_out, hs, np.array([[START_ID, 1]]))
        (logits.sum() + enc_out.sum()).backward()
        both = model.cells[0].w_ir.grad
        assert not np.allclose(both, enc_only)

    def test_causal_decoder(self):
        model = Seq2SeqModel(reduced_seq2seq(), dtype=np.float64)
        enc_out, hs = model.encode(frame_vecs(model))
        base = np.array([[START_ID, 10, 20, 30, 40, 50]])
        logits = model.decode(enc_out, hs, base).numpy()
        messed = base.copy()
        messed[0, 3:] = [7, 8, 9]
        logits2 = model.decode(enc_out, hs, messed).numpy()
        np.testing.assert_allclose(logits[:, :3], logits2[:, :3], atol=1e-6)
        assert not np.allclose(logits[:, 3:], logits2[:, 3:])

    def test_decode_does_not_mutate_encoder_state(self):
        model = Seq2SeqModel(reduced_seq2seq(), dtype=np.float64)
        enc_out, hs = model.encode(frame_vecs(model))
        before = [h.numpy().copy() for h in hs]
        model.decode(enc_out, hs, np.array([[START_ID, 1, 2]]))
        for h, b in zip(hs, before):
            np.testing.assert_array_equal(h.numpy(), b)

    def test_incremental_matches_teacher_forced(self):
        model = Seq2SeqModel(reduced_seq2seq(), dtype=np.float64)
        enc_state = model.encode(frame_vecs(model))
        tokens = [START_ID, 44, 199, END_ID]
        full = model.decode(*enc_state, np.array([tokens])).numpy()[0]
        state = model.begin_decode(enc_state)
        for i, tok in enumerate(tokens):
            np.testing.assert_allclose(model.decode_step(state, tok), full[i],
                                       atol=1e-9)

    def test_gradients_reach_all_params(self):
        model = Seq2SeqModel(reduced_seq2seq(dropout=0.0), dtype=np.float64)
        clips = Tensor(new_rng(4).standard_normal((1, 2, 3, 16, 16)))
        logits = model.forward(clips, np.array([[START_ID, 4, 7]]))
        logits.sum().backward()
        for name, p in model.named_params().items():
            assert p.grad is not None, name
            assert np.any(p.grad != 0.0), name

    def test_dropout_seeded(self):
        model = Seq2SeqModel(reduced_seq2seq(), dtype=np.float64)
        vecs = frame_vecs(model)
        target = np.array([[START_ID, 1, 2]])

        def run(seed):
            enc_out, hs = model.encode(vecs, train=True, rng=new_rng(seed))
            return model.decode(enc_out, hs, target, train=True,
                                rng=new_rng(seed)).numpy()

        np.testing.assert_array_equal(run(5), run(5))
        assert not np.array_equal(run(5), run(6))


class TestBuildModel:
    def test_dispatch(self):
        assert isinstance(build_model(reduced_vmt()), VmtModel)
        assert isinstance(build_model(reduced_seq2seq()), Seq2SeqModel)


class TestCheckpoints:
    def checkpoint(self, tmp_path, model, **kw):
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path, **kw)
        return path

    def test_roundtrip_bitwise(self, tmp_path):
        model = VmtModel(reduced_vmt(), seed=11)
        path = self.checkpoint(tmp_path, model)
        loaded, adam, codec = load_checkpoint(path)
        assert adam is None
        assert codec.time_shift_ms == 31.25
        assert loaded.config == model.config
        a, b = model.named_params(), loaded.named_params()
        for name in a:
            assert a[name].numpy().tobytes() == b[name].numpy().tobytes(), name

    def test_forward_identical_after_reload(self, tmp_path):
        model = Seq2SeqModel(reduced_seq2seq(), seed=2)
        path = self.checkpoint(tmp_path, model)
        loaded, _, _ = load_checkpoint(path)
        clips = Tensor(new_rng(9).standard_normal(
            (1, 2, 3, 16, 16)).astype(np.float32))
        target = np.array([[START_ID, 8, 9]])
        a = model.forward(clips, target).numpy()
        b = loaded.forward(clips, target).numpy()
        assert a.tobytes() == b.tobytes()

    def test_adam_state_roundtrip(self, tmp_path):
        model = VmtModel(reduced_vmt())
        params = model.named_params()
        adam = {"step": 17,
                "m": {n: np.full(p.shape, 0.25, dtype=np.float32)
                      for n, p in params.items()},
                "v": {n: np.full(p.shape, 0.5, dtype=np.float32)
                      for n, p in params.items()}}
        path = self.checkpoint(tmp_path, model, adam=adam)
        _, loaded, _ = load_checkpoint(path)
        assert loaded["step"] == 17
        np.testing.assert_array_equal(loaded["m"]["out.w"],
                                      adam["m"]["out.w"])
        np.testing.assert_array_equal(loaded["v"]["conv.0.kernel"],
                                      adam["v"]["conv.0.kernel"])

    def test_float64_roundtrip(self, tmp_path):
        model = VmtModel(reduced_vmt(), dtype=np.float64)
        path = self.checkpoint(tmp_path, model)
        loaded, _, _ = load_checkpoint(path)
        assert loaded.dtype == np.float64
        np.testing.assert_array_equal(loaded.out_w.numpy(),
                                      model.out_w.numpy())

    # -- corruption cases ----------------------------------------------------

    @staticmethod
    def parts(path):
        raw = path.read_bytes()
        (hlen,) = struct.unpack_from("<I", raw, 5)
        header = json.loads(raw[9:9 + hlen])
        return raw, header, raw[9 + hlen:]

    @staticmethod
    def rebuild(path, header, payload):
        blob = json.dumps(header, sort_keys=True).encode()
        path.write_bytes(CHECKPOINT_MAGIC + bytes([header["version"]])
                         + struct.pack("<I", len(blob)) + blob + payload)

    def test_bad_magic(self, tmp_path):
        path = self.checkpoint(tmp_path, VmtModel(reduced_vmt()))
        raw = path.read_bytes()
        path.write_bytes(b"NOPE" + raw[4:])
        with pytest.raises(ValueError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        path = self.checkpoint(tmp_path, VmtModel(reduced_vmt()))
        raw = path.read_bytes()
        path.write_bytes(raw[:4] + bytes([9]) + raw[5:])
        with pytest.raises(ValueError, match="version 9"):
            load_checkpoint(path)

    def test_missing_param_named(self, tmp_path):
        path = self.checkpoint(tmp_path, VmtModel(reduced_vmt()))
        raw, header, payload = self.parts(path)
        assert header["params"][-1]["name"] == "out.b"
        header["params"] = header["params"][:-1]
        self.rebuild(path, header, payload[:-310 * 4])
        with pytest.raises(ValueError, match="missing parameter 'out.b'"):
            load_checkpoint(path)

    def test_unknown_param_named(self, tmp_path):
        path = self.checkpoint(tmp_path, VmtModel(reduced_vmt()))
        raw, header, payload = self.parts(path)
        header["params"].append({"name": "bogus.w", "shape": [1]})
        self.rebuild(path, header, payload + b"\x00\x00\x00\x00")
        with pytest.raises(ValueError, match="unknown parameter 'bogus.w'"):
            load_checkpoint(path)

    def test_shape_mismatch_named(self, tmp_path):
        path = self.checkpoint(tmp_path, VmtModel(reduced_vmt()))
        raw, header, payload = self.parts(path)
        entry = next(e for e in header["params"] if e["name"] == "out.b")
        entry["shape"] = [31]
        self.rebuild(path, header, payload)
        with pytest.raises(ValueError, match="'out.b' has shape"):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        path = self.checkpoint(tmp_path, VmtModel(reduced_vmt()))
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path):
        path = self.checkpoint(tmp_path, VmtModel(reduced_vmt()))
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(ValueError, match="trailing"):
            load_checkpoint(path)
