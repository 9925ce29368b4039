import numpy as np
import pytest

from aids import dcrnn
from aids.dcrnn import (DcrnnModel, DimMismatch, ModelFileError, ModelShape, NonIntegral, NonPositive,
                        conv_output_len, gru_step, load_model, save_model)
from aids.training import (SingleClass, TrainConfig, Verdict, accuracy, classify_suspicious, grad_check,
                           malicious_probability, train)
from traffic.images import fit_scaler
from traffic.synth import SynthConfig, synth_traffic

TINY = ModelShape(height=4, width=4, filters=2, kernel=3, padding=1, stride=1, pool=2, hidden=2)


def toy_images(count: int, shape: ModelShape, seed: int):
    rng = np.random.default_rng(seed)
    labels = np.arange(count) % 2
    centre = np.where(labels == 1, 200.0, 50.0)[:, None, None]
    noise = rng.normal(0, 20, (count, shape.height, shape.width))
    return np.clip(np.rint(centre + noise), 0, 255), labels


@pytest.mark.parametrize('I_l, Kr, Q, SK, out', [(8, 3, 1, 1, 8), (8, 2, 0, 2, 4), (5, 5, 0, 1, 1),
                                                  (7, 3, 0, 2, 3)])
def test_conv_output_len(I_l, Kr, Q, SK, out):
    assert conv_output_len(I_l, Kr, Q, SK) == out


def test_conv_output_len_errors():
    with pytest.raises(NonIntegral):
        conv_output_len(8, 3, 0, 2)
    with pytest.raises(NonPositive):
        conv_output_len(8, 3, 1, 0)
    with pytest.raises(NonPositive):
        conv_output_len(2, 5, 0, 1)


def test_pooling_must_divide_feature_map():
    with pytest.raises(NonIntegral):
        ModelShape(height=6, width=6, pool=4).pooled_shape


def test_declared_shapes_match_measured_shapes():
    shape = ModelShape()
    model = DcrnnModel.initialize(shape, seed=1)
    for name, value in model.params.items():
        assert value.shape == shape.param_shapes()[name]
    images, _ = toy_images(3, shape, 0)
    windows, a, _, pooled = model.conv_forward(model.prepare(images))
    assert a.shape == (3, shape.filters) + shape.conv_shape
    assert pooled.shape == (3, shape.filters) + shape.pooled_shape
    assert shape.steps * shape.input_size == shape.filters * np.prod(shape.pooled_shape)
    caches = list()
    assert model.logits(model.prepare(images), caches).shape == (3, 2)
    assert len(caches[0]['steps']) == shape.steps
    assert caches[0]['steps'][0]['y'].shape == (3, shape.input_size)
    assert caches[0]['final'].shape == (3, shape.hidden)


def test_gru_step_rejects_mismatched_dimensions():
    cell = DcrnnModel.initialize(TINY, 0).cell()
    with pytest.raises(DimMismatch):
        gru_step(cell, np.zeros(TINY.input_size + 1), np.zeros(TINY.hidden))
    with pytest.raises(DimMismatch):
        gru_step(cell, np.zeros(TINY.input_size), np.zeros(TINY.hidden + 1))


def test_gru_state_stays_bounded():
    cell = DcrnnModel.initialize(TINY, 0).cell()
    state = np.zeros(TINY.hidden)
    rng = np.random.default_rng(2)
    for _ in range(50):
        state = gru_step(cell, rng.normal(0, 5, TINY.input_size), state)
        assert np.all(np.abs(state) <= 1)


def test_model_rejects_wrong_image_and_parameter_shapes():
    model = DcrnnModel.initialize(TINY, 0)
    with pytest.raises(DimMismatch):
        model.forward(np.zeros((8, 8)))
    params = dict(model.params, proj=np.zeros((3, 3)))
    with pytest.raises(DimMismatch):
        DcrnnModel(TINY, params)


def test_forward_is_a_distribution():
    model = DcrnnModel.initialize(ModelShape(), 3)
    images, _ = toy_images(5, ModelShape(), 1)
    probs = model.forward(images)
    assert probs.shape == (5, 2)
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_zero_model_is_undecided():
    probs = DcrnnModel.zeros(TINY).forward(np.full((4, 4), 128.0))
    assert np.allclose(probs, 0.5)


def test_gradients_match_central_differences():
    model = DcrnnModel.initialize(TINY, seed=5)
    image = np.random.default_rng(5).integers(1, 256, (4, 4)).astype(np.float64)
    assert grad_check(model, image, 1, eps=1e-5) <= 1e-4
    assert grad_check(model, image, 0, eps=1e-5) <= 1e-4


def test_grad_check_catches_a_wrong_derivative(monkeypatch):
    model = DcrnnModel.initialize(TINY, seed=5)
    image = np.random.default_rng(5).integers(1, 256, (4, 4)).astype(np.float64)
    monkeypatch.setattr(dcrnn, 'tanh_act', lambda t: np.tanh(1.5 * t))
    assert grad_check(model, image, 1, eps=1e-5) > 1e-2


def test_grad_check_eps_range():
    with pytest.raises(ValueError):
        grad_check(DcrnnModel.initialize(TINY, 0), np.zeros((4, 4)), 0, eps=0.1)


def test_toy_training_separates_bright_from_dark():
    shape = ModelShape(height=8, width=8, filters=4, hidden=8)
    images, labels = toy_images(200, shape, 7)
    model = DcrnnModel.initialize(shape, seed=7)
    trained, losses = train(model, images, labels, TrainConfig(epochs=50, seed=7))
    assert len(losses) == 50
    assert losses[-1] < losses[0]
    assert accuracy(trained, images, labels) >= 0.95
    # the input model is untouched
    assert np.array_equal(model.params['dense_w'], DcrnnModel.initialize(shape, seed=7).params['dense_w'])


def test_single_class_training_is_refused():
    images, _ = toy_images(10, TINY, 0)
    with pytest.raises(SingleClass):
        train(DcrnnModel.initialize(TINY, 0), images, np.zeros(10), TrainConfig(epochs=1))


@pytest.mark.parametrize('kwargs', [dict(learning_rate=-1.0), dict(epochs=0), dict(batch_size=0),
                                    dict(momentum=1.0)])
def test_invalid_training_config(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_save_and_load_model(tmp_path):
    model = DcrnnModel.initialize(ModelShape(hidden=4), seed=2)
    path = str(tmp_path / 'dcrnn.bin')
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.shape == model.shape
    images, _ = toy_images(4, model.shape, 3)
    assert np.array_equal(loaded.forward(images), model.forward(images))


def test_load_rejects_truncated_and_foreign_files(tmp_path):
    path = tmp_path / 'dcrnn.bin'
    save_model(DcrnnModel.initialize(TINY, 2), str(path))
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(ModelFileError):
        load_model(str(path))
    path.write_bytes(data + b'\x00')
    with pytest.raises(ModelFileError):
        load_model(str(path))
    path.write_bytes(b'XXXX' + data[4:])
    with pytest.raises(ModelFileError):
        load_model(str(path))


def test_suspicious_classification_follows_probabilities():
    dataset = synth_traffic(SynthConfig(20, {'DoS': 5}), seed=1)
    scaler = fit_scaler(dataset)
    model = DcrnnModel.initialize(ModelShape(), seed=1)
    fv = dataset.records[0].features
    p_normal, p_malicious = malicious_probability(model, fv, scaler)
    assert p_normal + p_malicious == pytest.approx(1.0)
    expected = Verdict.MALICIOUS if p_malicious > p_normal else Verdict.NORMAL
    assert classify_suspicious(model, fv, scaler) == expected
    assert classify_suspicious(DcrnnModel.zeros(ModelShape()), fv, scaler) == Verdict.NORMAL
