"""Training loop: adversarial gradient routing, schedules, config handling,
history bookkeeping, and end-to-end determinism."""

import math

import numpy as np
import pytest

import cada.autodiff as ad
import cada.data as dt
import cada.model as md
import cada.training as tr


def _tiny_cfg(**overrides):
    base = dict(
        variant="cada-a",
        epochs=2,
        batch_size=16,
        mc_samples=3,
        feature_widths=(8, 6),
        classifier_width=5,
        discriminator_width=5,
        dataset={"kind": "two_moons", "n_per_domain": 24,
                 "noise": 0.1, "rotation_deg": 35.0},
    )
    base.update(overrides)
    return tr.TrainConfig(**base).validate()


def _fixture(seed=0, n_s=5, n_t=4):
    rng = np.random.default_rng(seed)
    params = md.init_params(3, 2, rng, feature_widths=(6, 4),
                            classifier_width=4, discriminator_width=4)
    cfg = tr.TrainConfig(variant="cada-w", mc_samples=3, dropout_rate=0.3,
                         feature_widths=(6, 4), classifier_width=4,
                         discriminator_width=4)
    x_s = rng.standard_normal((n_s, 3))
    y_s = rng.integers(0, 2, size=n_s)
    x_t = rng.standard_normal((n_t, 3))
    rand = tr.draw_step_randomness(params, cfg, n_s, n_t,
                                   np.random.default_rng(1),
                                   np.random.default_rng(2))
    return params, cfg, x_s, y_s, x_t, rand


def _grads(params, x_s, y_s, x_t, rand, root_kind, grl):
    tape = ad.Tape()
    parts = tr.build_losses(tape, params, x_s, y_s, x_t, rand, 3,
                            attention_w=None, grl_strength=grl)
    cls = ad.add(parts.classifier_loss, parts.classifier_var_loss)
    dom = ad.add(parts.domain_loss, parts.domain_var_loss)
    root = {"cls": cls, "dom": dom, "both": ad.add(cls, dom)}[root_kind]
    tape.backward(root)
    return tr.collect_gradients(tape, params)


@pytest.mark.parametrize("tradeoff", [0.0, 0.3, 1.0])
def test_reversal_routes_gradients_like_the_saddle_point(tradeoff):
    params, _, x_s, y_s, x_t, rand = _fixture()
    fused = _grads(params, x_s, y_s, x_t, rand, "both", tradeoff)
    cls_only = _grads(params, x_s, y_s, x_t, rand, "cls", None)
    dom_only = _grads(params, x_s, y_s, x_t, rand, "dom", None)
    for name in fused:
        if name.startswith("feature"):
            want = cls_only[name] - tradeoff * dom_only[name]
            denom = np.maximum(np.abs(want), 1e-12)
            assert np.max(np.abs(fused[name] - want) / denom) < 1e-10
        elif name.startswith("discriminator"):
            # the discriminator side never sees the reversal
            np.testing.assert_array_equal(fused[name], dom_only[name])
        else:
            np.testing.assert_array_equal(fused[name], cls_only[name])


def test_discriminator_gradients_do_not_depend_on_tradeoff():
    params, _, x_s, y_s, x_t, rand = _fixture()
    weak = _grads(params, x_s, y_s, x_t, rand, "both", 0.1)
    strong = _grads(params, x_s, y_s, x_t, rand, "both", 5.0)
    for name in weak:
        if name.startswith("discriminator"):
            np.testing.assert_array_equal(weak[name], strong[name])


def test_domain_losses_do_not_touch_classifier_heads():
    params, _, x_s, y_s, x_t, rand = _fixture()
    dom_only = _grads(params, x_s, y_s, x_t, rand, "dom", None)
    for name in dom_only:
        if name.startswith("classifier"):
            np.testing.assert_array_equal(dom_only[name], 0.0)


def test_domain_loss_is_share_weighted():
    params, _, x_s, y_s, x_t, rand = _fixture(n_s=3, n_t=1)
    tape = ad.Tape()
    parts = tr.build_losses(tape, params, x_s, y_s, x_t, rand, 3,
                            attention_w=None, grl_strength=None)

    def one_side(x, label):
        side = ad.Tape()
        f = md.feature_extract(side, x, params, plan=rand.feature_plan)
        head = md.discriminator_forward(side, f, params,
                                        plan=rand.discriminator_plan)
        labels = np.full(len(x), label, dtype=np.int64)
        return ad.cross_entropy(head.logits, labels).item()

    want = 0.75 * one_side(x_s, 0) + 0.25 * one_side(x_t, 1)
    assert parts.domain_loss.item() == want


def test_lambda_schedule_oracles():
    assert tr.lambda_schedule(0.0, "annealed") == 0.0
    # 2 / (1 + e^(-10 p)) - 1 is tanh(5 p), derived independently
    assert abs(tr.lambda_schedule(0.5, "annealed") - math.tanh(2.5)) < 1e-15
    assert abs(tr.lambda_schedule(1.0, "annealed") - math.tanh(5.0)) < 1e-15
    assert abs(tr.lambda_schedule(0.5, "annealed") - 0.9866142981514303) < 1e-15
    assert tr.lambda_schedule(0.3, "constant", value=0.25) == 0.25
    with pytest.raises(ValueError):
        tr.lambda_schedule(1.5, "annealed")
    with pytest.raises(ValueError):
        tr.lambda_schedule(0.5, "linear")


def test_total_objective_oracle():
    assert tr.total_objective(1.0, 0.2, 0.6, 0.1, 0.5) == 0.85


def test_sgd_momentum_recurrence():
    params, _, _, _, _, _ = _fixture()
    velocities = tr.make_velocities(params)
    snapshot = {name: arr.copy() for name, arr in params.named_arrays()}
    grads = {name: np.ones_like(arr) for name, arr in params.named_arrays()}

    tr.apply_updates(params, velocities, grads, learning_rate=0.1, momentum=0.5)
    tr.apply_updates(params, velocities, grads, learning_rate=0.1, momentum=0.5)
    for name, arr in params.named_arrays():
        # v1 = 1, v2 = 1.5; theta = theta0 - 0.1 * (v1 + v2)
        np.testing.assert_allclose(velocities[name], 1.5)
        np.testing.assert_allclose(arr, snapshot[name] - 0.25, atol=1e-15)


def test_zero_learning_rate_freezes_params():
    params, cfg, x_s, y_s, x_t, _ = _fixture()
    cfg.learning_rate = 0.0
    velocities = tr.make_velocities(params)
    snapshot = {name: arr.copy() for name, arr in params.named_arrays()}
    tr.train_step(params, velocities, x_s, y_s, x_t, cfg, 0.5,
                  np.random.default_rng(0), np.random.default_rng(1),
                  np.random.default_rng(2))
    for name, arr in params.named_arrays():
        np.testing.assert_array_equal(arr, snapshot[name])


def test_source_only_never_updates_the_discriminator():
    params, cfg, x_s, y_s, x_t, _ = _fixture()
    cfg.variant = "source-only"
    velocities = tr.make_velocities(params)
    snapshot = {name: arr.copy() for name, arr in params.named_arrays()}
    for _ in range(3):
        tr.train_step(params, velocities, x_s, y_s, x_t, cfg, 0.0,
                      np.random.default_rng(0), np.random.default_rng(1),
                      np.random.default_rng(2))
    for name, arr in params.named_arrays():
        if name.startswith("discriminator"):
            np.testing.assert_array_equal(arr, snapshot[name])
            np.testing.assert_array_equal(velocities[name], 0.0)
        else:
            assert not np.array_equal(arr, snapshot[name])


def test_train_step_rejects_empty_minibatches():
    params, cfg, x_s, y_s, x_t, _ = _fixture()
    with pytest.raises(ValueError):
        tr.train_step(params, tr.make_velocities(params), x_s[:0], y_s[:0], x_t,
                      cfg, 0.5, np.random.default_rng(0),
                      np.random.default_rng(1), np.random.default_rng(2))


def test_config_round_trip_and_validation(tmp_path):
    cfg = _tiny_cfg(lambda_kind="constant", lambda_value=0.5)
    path = tmp_path / "config.json"
    cfg.save(path)
    again = tr.TrainConfig.load(path)
    assert again.to_dict() == cfg.to_dict()
    cfg.save(tmp_path / "b.json")
    assert (tmp_path / "b.json").read_bytes() == path.read_bytes()


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown keys"):
        tr.TrainConfig.from_dict({"variant": "cada-a", "leraning_rate": 0.1})


def test_config_rejects_wrong_types():
    with pytest.raises(ValueError):
        tr.TrainConfig.from_dict({"mc_samples": True})
    with pytest.raises(ValueError):
        tr.TrainConfig.from_dict({"epochs": 2.5})
    with pytest.raises(ValueError):
        tr.TrainConfig.from_dict({"feature_widths": [8, "six"]})
    with pytest.raises(ValueError):
        tr.TrainConfig.from_dict({"dataset": "two_moons"})
    with pytest.raises(ValueError):
        tr.TrainConfig.from_dict([])


def test_config_accepts_int_for_float_fields():
    cfg = tr.TrainConfig.from_dict({"lambda_value": 1})
    assert cfg.lambda_value == 1.0 and isinstance(cfg.lambda_value, float)


@pytest.mark.parametrize("bad", [
    {"variant": "dann"},
    {"lambda_kind": "linear"},
    {"lambda_value": -1.0},
    {"mc_samples": 0},
    {"batch_size": 0},
    {"epochs": -1},
    {"dropout_rate": 1.0},
    {"masking_constant": 0.9},
    {"learning_rate": -0.1},
    {"momentum": 1.0},
    {"feature_widths": []},
    {"feature_widths": [0]},
    {"classifier_width": 0},
    {"seed": -1},
    {"dataset": {"kind": "nope"}},
])
def test_config_validation_rejects(bad):
    with pytest.raises(ValueError):
        tr.TrainConfig.from_dict(bad)


def test_history_bookkeeping(tmp_path):
    history = tr.TrainHistory()
    row = {name: 0.5 for name in tr.HISTORY_COLUMNS}
    row["epoch"] = 0
    history.append(**row)
    assert len(history) == 1
    np.testing.assert_array_equal(history.column("objective"), [0.5])
    with pytest.raises(KeyError):
        history.column("not_a_column")
    with pytest.raises(ValueError):
        history.append(epoch=1)  # missing fields
    bad = dict(row, epoch=1, objective=float("nan"))
    with pytest.raises(ValueError):
        history.append(**bad)

    path = tmp_path / "history.csv"
    history.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(tr.HISTORY_COLUMNS)
    assert lines[1].startswith("0,0.5,")
    assert len(lines) == 2


def test_draw_step_randomness_shapes():
    params, cfg, _, _, _, _ = _fixture()
    rand = tr.draw_step_randomness(params, cfg, 7, 5,
                                   np.random.default_rng(0),
                                   np.random.default_rng(1))
    assert rand.classifier_noise.shape == (3, 7, 2)
    assert rand.domain_noise_source.shape == (3, 7, 2)
    assert rand.domain_noise_target.shape == (3, 5, 2)
    assert [m.shape[0] for m in rand.feature_plan.masks] == [6, 4]
    assert [m.shape[0] for m in rand.classifier_plan.masks] == [4]
    assert [m.shape[0] for m in rand.discriminator_plan.masks] == [4]


def test_train_enforces_label_quarantine():
    ds = dt.make_two_moons(20, 0.1, 35.0, np.random.default_rng(0))
    cfg = _tiny_cfg()
    labeled_target = dt.Batch(ds.target.features, ds.evaluation_target_labels(),
                              ds.target.domain)
    with pytest.raises(ValueError, match="unlabeled"):
        tr.train(cfg, ds.source, labeled_target)
    with pytest.raises(ValueError, match="labeled"):
        tr.train(cfg, ds.target, ds.target)


def test_train_rejects_dimension_mismatch():
    cfg = _tiny_cfg()
    source = dt.Batch(np.ones((8, 2)), np.zeros(8, dtype=np.int64),
                      np.zeros(8, dtype=np.int64))
    target = dt.Batch(np.ones((8, 3)), None, np.ones(8, dtype=np.int64))
    with pytest.raises(ValueError, match="dimensions"):
        tr.train(cfg, source, target)


def test_zero_epochs_returns_untrained_params():
    ds = dt.make_two_moons(20, 0.1, 35.0, np.random.default_rng(0))
    cfg = _tiny_cfg(epochs=0)
    params, history = tr.train(cfg, ds.source, ds.target)
    assert len(history) == 0
    fresh = md.init_params(2, 2, np.random.default_rng([cfg.seed, 1]),
                           feature_widths=cfg.feature_widths,
                           classifier_width=cfg.classifier_width,
                           discriminator_width=cfg.discriminator_width)
    for (name, arr), (_, want) in zip(params.named_arrays(), fresh.named_arrays()):
        np.testing.assert_array_equal(arr, want)


@pytest.mark.parametrize("variant", tr.VARIANTS)
def test_train_smoke_every_variant(variant):
    ds = dt.make_two_moons(24, 0.1, 35.0, np.random.default_rng(0))
    cfg = _tiny_cfg(variant=variant)
    seen = []
    params, history = tr.train(cfg, ds.source, ds.target,
                               progress=lambda e, row: seen.append(e))
    assert seen == [0, 1]
    assert len(history) == 2
    for name in tr.HISTORY_COLUMNS:
        assert np.all(np.isfinite(history.column(name)))
    assert np.all(history.column("epoch") == [0, 1])
    assert np.all(history.column("target_accuracy") == -1.0)  # no probe given
    if variant == "source-only":
        np.testing.assert_array_equal(history.column("lambda"), 0.0)
    else:
        want = [tr.lambda_schedule(e, cfg.lambda_kind, cfg.lambda_value)
                for e in (0.0, 1.0)]
        np.testing.assert_allclose(history.column("lambda"), want)


def test_train_records_probe_accuracy():
    ds = dt.make_two_moons(24, 0.1, 35.0, np.random.default_rng(0))
    cfg = _tiny_cfg(variant="cada-w")
    hidden = dt.Batch(ds.target.features, ds.evaluation_target_labels(),
                      ds.target.domain)

    def probe(params):
        logits = md.infer_class_logits(params, hidden.features)
        return float((logits.argmax(axis=1) == hidden.labels).mean())

    _, history = tr.train(cfg, ds.source, ds.target, target_accuracy_probe=probe)
    acc = history.column("target_accuracy")
    assert np.all(acc >= 0.0) and np.all(acc <= 1.0)


def test_train_is_deterministic(tmp_path):
    ds = dt.make_two_moons(24, 0.1, 35.0, np.random.default_rng(0))
    outputs = []
    for run in ("a", "b"):
        cfg = _tiny_cfg(variant="cada-p")
        params, history = tr.train(cfg, ds.source, ds.target)
        history.to_csv(tmp_path / f"{run}.csv")
        md.save_checkpoint(params, tmp_path / f"{run}.json")
        outputs.append(run)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_objective_column_satisfies_its_identity():
    ds = dt.make_two_moons(24, 0.1, 35.0, np.random.default_rng(0))
    cfg = _tiny_cfg(variant="cada-w")
    _, history = tr.train(cfg, ds.source, ds.target)
    want = (history.column("classifier_loss") + history.column("classifier_var_loss")
            - history.column("lambda")
            * (history.column("domain_loss") + history.column("domain_var_loss")))
    np.testing.assert_allclose(history.column("objective"), want, atol=1e-15)
