import numpy as np
import pytest
from helpers import frame_loss, jitter_params, numeric_grad, rel_err, toy_scene

from poet import tensor as T
from poet.errors import CapacityError, ClassError, ConfigError, InputError, VersionError
from poet.geometry import is_rotation
from poet.model import Detection, PoET, full_scale_config, positional_encode, toy_config
from poet.model.backbone import stub_pyramid
from poet.scenes import gt_detections, perturb_detections, NoiseModel


def _gradcheck_cfg(**kw):
    return toy_config(d_h=16, pos_frequencies=2, n_heads=2, n_levels=2, ffn_dim=24, **kw)


def test_positional_encode_zero_box():
    e = positional_encode([0, 0, 0, 0], 4).reshape(4, 4, 2)
    assert np.array_equal(e[..., 0], np.zeros((4, 4)))
    assert np.array_equal(e[..., 1], np.ones((4, 4)))


def test_positional_encode_full_length_and_range():
    assert positional_encode([0.5, 0.5, 0.2, 0.3], 32).shape == (256,)
    with pytest.raises(InputError):
        positional_encode([0.5, 1.2, 0.1, 0.1], 4)


def test_positional_encode_bands_distinguish_nearby_boxes():
    L = 8
    a = positional_encode([0.300, 0.5, 0.2, 0.2], L).reshape(4, L, 2)
    b = positional_encode([0.301, 0.5, 0.2, 0.2], L).reshape(4, L, 2)
    for k in range(L):
        if abs(np.sin(2 ** k * np.pi * 1e-3)) > 0:
            assert np.linalg.norm(a[0, k] - b[0, k]) > 0
    assert np.array_equal(a[1:], b[1:])


def test_config_invariants():
    with pytest.raises(ConfigError):
        toy_config(d_h=48)  # 8 * L != d_h
    with pytest.raises(ConfigError):
        toy_config(n_heads=5)
    with pytest.raises(ConfigError):
        toy_config(n_levels=4)
    with pytest.raises(ConfigError):
        toy_config().with_ablation("bogus")
    cfg = full_scale_config()
    assert (cfg.d_h, cfg.n_heads, cfg.n_encoder_layers, cfg.pos_frequencies) == (256, 16, 5, 32)


def test_config_round_trip_and_version():
    cfg = toy_config(class_mode="agnostic")
    assert type(cfg).from_dict(cfg.to_dict()) == cfg
    with pytest.raises(VersionError):
        type(cfg).from_dict({**cfg.to_dict(), "version": 99})
    with pytest.raises(ConfigError):
        type(cfg).from_dict({**cfg.to_dict(), "colour": 1})


def test_ablation_presets():
    base = full_scale_config()
    assert base.with_ablation("rp+q").query_mode == "learned"
    assert base.with_ablation("rp+q").ref_point_mode == "learned"
    assert base.with_ablation("rp").query_mode == "bbox_encoded"
    assert base.with_ablation("q").ref_point_mode == "bbox_center"
    assert base.with_ablation("agnostic").class_mode == "agnostic"
    small = base.with_ablation("small")
    assert small.n_encoder_layers < 5 and small.n_decoder_layers < 5


def test_head_layouts():
    p = PoET(full_scale_config(n_encoder_layers=1, n_decoder_layers=1)).params
    assert p["head.translation.1.weight"].shape[1] == 63
    assert p["head.rotation.1.weight"].shape[1] == 126
    q = PoET(toy_config(class_mode="agnostic")).params
    assert q["head.translation.1.weight"].shape[1] == 3
    assert q["head.rotation.1.weight"].shape[1] == 6


def test_encoder_shapes_and_level_check(rng):
    m = PoET(toy_config())
    pyr = [T.Tensor(rng.normal(size=(32, h, w))) for h, w in [(12, 16), (6, 8)]]
    out = m.encode(pyr)
    assert [o.shape for o in out] == [p.shape for p in pyr]
    with pytest.raises(ConfigError):
        m.encode(pyr[:1])


def test_encoder_degenerate_init_is_feedforward_only(rng):
    cfg = toy_config(n_levels=1)
    m = PoET(cfg)
    p = m.params
    d = cfg.d_h
    for part in ("offsets", "weights"):
        p[f"encoder.0.attn.{part}.weight"].data[:] = 0
        p[f"encoder.0.attn.{part}.bias"].data[:] = 0
    for part in ("value", "output"):
        p[f"encoder.0.attn.{part}.weight"].data = np.eye(d)
        p[f"encoder.0.attn.{part}.bias"].data[:] = 0
    x = rng.normal(size=(d, 12, 16))
    out = m.encode([T.Tensor(x)])[0].data

    def ln(v):
        mu = v.mean(-1, keepdims=True)
        return (v - mu) / np.sqrt(((v - mu) ** 2).mean(-1, keepdims=True) + 1e-5)

    flat = x.reshape(d, -1).T
    y = ln(flat + flat)  # attention returns each cell's own value
    w0, b0 = p["encoder.0.ffn.0.weight"].data, p["encoder.0.ffn.0.bias"].data
    w1, b1 = p["encoder.0.ffn.1.weight"].data, p["encoder.0.ffn.1.bias"].data
    ref = ln(y + np.maximum(y @ w0 + b0, 0) @ w1 + b1)
    assert np.max(np.abs(out.reshape(d, -1).T - ref)) < 1e-10


def test_encoder_input_gradient(rng):
    m = PoET(_gradcheck_cfg())
    jitter_params(m, rng)
    pyr = [rng.normal(size=(16, 12, 16)), rng.normal(size=(16, 6, 8))]
    readout = [rng.normal(size=a.shape) for a in pyr]

    def f(levels):
        outs = m.encode(levels)
        return T.add(T.tsum(T.mul(outs[0], readout[0])), T.tsum(T.mul(outs[1], readout[1])))

    ts = [T.Tensor(a, requires_grad=True) for a in pyr]
    T.backward(f(ts))
    for lvl in range(2):
        for _ in range(5):
            idx = tuple(rng.integers(s) for s in pyr[lvl].shape)
            old = pyr[lvl][idx]
            pyr[lvl][idx] = old + 1e-6
            fp = f([T.Tensor(a) for a in pyr]).item()
            pyr[lvl][idx] = old - 1e-6
            fm = f([T.Tensor(a) for a in pyr]).item()
            pyr[lvl][idx] = old
            assert rel_err(ts[lvl].grad[idx], (fp - fm) / 2e-6, floor=1e-6) < 1e-3


def test_decode_empty_and_capacity():
    seq = toy_scene()
    m = PoET(toy_config(n_queries=2))
    out = m.forward(seq.frames[0], [])
    assert len(out) == 0 and out.to_predictions() == []
    with pytest.raises(CapacityError):
        m.forward(seq.frames[0], gt_detections(seq.frames[0]))


def test_decode_permutation_equivariance(rng):
    seq = toy_scene(n_objects=4)
    frame = seq.frames[0]
    m = PoET(toy_config())
    raw = [r.data for r in m.features(frame)]
    dets = gt_detections(frame)
    perm = rng.permutation(len(dets))
    a = m.forward(raw, dets)
    b = m.forward(raw, [dets[i] for i in perm])
    assert np.allclose(a.translation.data[perm], b.translation.data, atol=1e-12)
    assert np.allclose(a.rotation.data[perm], b.rotation.data, atol=1e-12)


def test_heads_class_selection():
    m = PoET(toy_config())
    emb = T.Tensor(np.random.default_rng(0).normal(size=(2, 32)))
    a = m.heads(emb, [0, 1])
    b = m.heads(emb, [2, 1])
    assert not np.allclose(a.translation.data[0], b.translation.data[0])
    assert np.array_equal(a.translation.data[1], b.translation.data[1])
    with pytest.raises(ClassError):
        m.heads(emb, [0, 4])


def test_rotation_head_starts_at_identity():
    m = PoET(toy_config())
    bias = m.params["head.rotation.1.bias"].data.reshape(-1, 6)
    assert np.allclose(bias, [1, 0, 0, 0, 1, 0])


def test_forward_determinism_and_outputs():
    seq = toy_scene()
    frame = seq.frames[0]
    m = PoET(toy_config())
    dets = gt_detections(frame)
    p1 = m.predict(frame, dets)
    p2 = m.predict(frame, dets)
    assert len(p1) == len(dets)
    for a, b in zip(p1, p2):
        assert np.array_equal(a.translation, b.translation) and np.array_equal(a.rotation, b.rotation)
        assert is_rotation(a.rotation)


@pytest.mark.parametrize("ablation", ["baseline", "agnostic", "small", "rp", "q", "rp+q"])
def test_ablation_forward(ablation):
    seq = toy_scene()
    cfg = toy_config(n_encoder_layers=2, n_decoder_layers=2).with_ablation(ablation)
    m = PoET(cfg)
    out = m.forward(seq.frames[0], gt_detections(seq.frames[0]))
    assert out.translation.shape == (len(seq.frames[0].objects), 3)
    assert ("query_embed" in m.params) == (cfg.query_mode == "learned")
    assert ("ref_points.weight" in m.params) == (cfg.ref_point_mode == "learned")


def test_parameter_gradients_per_layer_type(rng):
    m = PoET(_gradcheck_cfg(n_encoder_layers=1, n_decoder_layers=1))
    jitter_params(m, rng)
    frame = toy_scene().frames[0]
    raw = [r.data for r in m.features(frame)]
    loss = frame_loss(m, raw, frame)
    T.backward(loss)
    groups: dict[str, list[str]] = {}
    for name in m.trainable():
        key = ".".join(k for k in name.split(".")[:3] if not k.isdigit())
        groups.setdefault(key, []).append(name)
    for key, names in groups.items():
        for _ in range(4):
            name = names[rng.integers(len(names))]
            p = m.params[name]
            idx = tuple(rng.integers(s) for s in p.shape)
            old = p.data[idx]
            p.data[idx] = old + 1e-6
            fp = frame_loss(m, raw, frame).item()
            p.data[idx] = old - 1e-6
            fm = frame_loss(m, raw, frame).item()
            p.data[idx] = old
            assert rel_err(p.grad[idx], (fp - fm) / 2e-6, floor=1e-6) < 1e-3, (name, idx)


def test_conv_backbone_frozen_by_default():
    seq = toy_scene(rasterize=True)
    m = PoET(toy_config(backbone="conv"))
    assert all(not p.requires_grad for n, p in m.params.items() if n.startswith("backbone."))
    out = m.forward(seq.frames[0], gt_detections(seq.frames[0]))
    assert out.translation.shape[0] == len(seq.frames[0].objects)
    m2 = PoET(toy_config(backbone="conv", backbone_frozen=False))
    assert all(p.requires_grad for n, p in m2.params.items() if n.startswith("backbone."))
    assert not m2.features_constant


def test_conv_backbone_needs_image():
    seq = toy_scene(rasterize=False)
    m = PoET(toy_config(backbone="conv"))
    with pytest.raises(InputError):
        m.forward(seq.frames[0], gt_detections(seq.frames[0]))


def test_stub_features_deterministic():
    seq = toy_scene()
    cfg = toy_config()
    a = stub_pyramid(seq.frames[0], cfg)
    b = stub_pyramid(seq.frames[0], cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert [x.shape for x in a] == [(16, 12, 16), (16, 6, 8)]


def test_checkpoint_round_trip(tmp_path, rng):
    m = PoET(toy_config(class_mode="agnostic"))
    jitter_params(m, rng)
    path = tmp_path / "m.ckpt"
    m.save(path)
    m2 = PoET.load(path)
    assert m2.cfg == m.cfg
    assert all(np.array_equal(m.params[k].data, m2.params[k].data) for k in m.params)
    assert all(m.params[k].requires_grad == m2.params[k].requires_grad for k in m.params)


def test_checkpoint_mismatch_is_version_error(tmp_path):
    from poet import container

    m = PoET(toy_config())
    state = m.state_dict()
    state.pop("level_embed")
    container.save(tmp_path / "bad.ckpt", state, {"kind": "poet-checkpoint", "model_config": m.cfg.to_dict()})
    with pytest.raises(VersionError):
        PoET.load(tmp_path / "bad.ckpt")


def test_perturbed_boxes_degrade_predictions_of_trained_model():
    """Shifted boxes move reference points off the objects; error must grow."""
    from poet.trainer import toy_train_config, train

    seq = toy_scene(seed=11, n_frames=4, n_objects=3)
    m = PoET(toy_config())
    train(m, [seq], toy_train_config(epochs=120, batch_size=4))

    def err(mode):
        rng = np.random.default_rng(0)
        total = []
        for f in seq.frames:
            dets = gt_detections(f) if mode == "gt" else perturb_detections(f, NoiseModel(sigma_center=0.05), rng)
            for d, p in zip(dets, m.predict(f, dets)):
                o = next(o for o in f.objects if o.landmark_id == d.source)
                total.append(np.linalg.norm(p.translation - o.pose_cam.translation))
        return np.mean(total)

    assert err("perturbed") > err("gt")


@pytest.mark.slow
def test_toy_overfit_eight_frames():
    from poet.trainer import toy_train_config, train

    seq = toy_scene(seed=5, n_frames=8, n_objects=3)
    m = PoET(toy_config())
    train(m, [seq], toy_train_config(lr=1e-3, epochs=1000, batch_size=8))  # full batch, 1000 steps
    errs = [
        np.linalg.norm(p.translation - o.pose_cam.translation)
        for f in seq.frames
        for o, p in zip(f.objects, m.predict(f, gt_detections(f)))
    ]
    assert np.mean(errs) < 0.02  # validated run: 1.21 cm


def test_detection_validation():
    with pytest.raises(InputError):
        Detection((0.5, 0.5, 0.2, 1.2), 0)
    with pytest.raises(InputError):
        Detection((0.05, 0.5, 0.2, 0.2), 0)  # crosses the left border
    with pytest.raises(InputError):
        Detection((0.5, 0.5, 0.2, 0.2), 0, score=1.5)
