import json

import numpy as np
import pytest

from Spikekal.Errors import ConfigError, ContractViolation
from Spikekal.snn.Checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from Spikekal.snn.Network import (FeatureScaler, GainDecoder, NetworkTopology, SpikingNetwork, decode_gain,
                                  decoder_lms_update, encode_features, network_forward, neuron_count)
from Spikekal.snn.Neuron import LifParams
from Spikekal.snn.Plasticity import EligibilityTrace, PlasticityParams


def _network(n=4, m=2, seed=0, w_init_max=0.5):
    rng = np.random.default_rng(seed)
    return SpikingNetwork.build(n, m, LifParams(), GainDecoder.initial(n * m), rng, w_init_max)


def test_neuron_counts():
    assert neuron_count(4, 2) == 14
    assert neuron_count(3, 1) == 7
    assert _network().neurons == 14
    assert _network(3, 1).neurons == 7


def test_topology_initialisation():
    net = _network(w_init_max=0.3)
    W = net.topology.W
    assert W.shape == (8, 6)
    assert W.min() >= 0.0 and W.max() <= 0.3
    np.testing.assert_array_equal(_network(seed=5).topology.W, _network(seed=5).topology.W)
    with pytest.raises(ContractViolation):
        NetworkTopology(3, 2, np.zeros((3, 2)))


def test_build_checks_decoder_size():
    with pytest.raises(ContractViolation):
        SpikingNetwork.build(4, 2, LifParams(), GainDecoder.initial(7), np.random.default_rng(0))


def test_encode_features():
    np.testing.assert_allclose(encode_features([1.0, -2.0], [0.5], 2.0), [2.0, -4.0, 1.0])
    np.testing.assert_allclose(encode_features([0.0], [0.0], 2.0), [0.0, 0.0])
    np.testing.assert_allclose(encode_features([1.0, -2.0], [0.5], 2.0, input_bias=3.0), [5.0, -1.0, 4.0])


def test_feature_scaler_normalises_by_running_rms():
    scaler = FeatureScaler.zeros(2, window=10)
    np.testing.assert_allclose(scaler.normalize(np.array([0.0, 4.0])), [0.0, 1.0])
    for _ in range(50):
        z = scaler.normalize(np.array([0.0, -4.0]))
    np.testing.assert_allclose(z, [0.0, -1.0])
    np.testing.assert_allclose(encode_features([0.0], [4.0], 2.0, 3.0, scaler), [3.0, 5.0])
    with pytest.raises(ConfigError):
        FeatureScaler.zeros(2, window=0)
    with pytest.raises(ContractViolation):
        scaler.normalize(np.zeros(3))


def test_forward_without_weights_keeps_outputs_silent():
    net = _network(w_init_max=0.0)
    result = network_forward(net, np.full(6, 5.0), 20)
    assert result.input_spike_counts.sum() > 0
    assert result.spike_counts.sum() == 0
    np.testing.assert_array_equal(result.traces, np.zeros(8))


def test_forward_propagates_spikes_and_bounds_traces():
    net = _network(w_init_max=1.0)
    bound = net.decoder.trace_bound(net.lif.snn_dt)
    total = 0
    for _ in range(50):
        result = network_forward(net, np.full(6, 20.0), 20)
        total += result.spike_counts.sum()
        assert np.all(result.traces <= bound + 1e-12)
        assert np.all(result.spike_counts <= 20)
    assert total > 0
    assert net.now == pytest.approx(50 * 20 * net.lif.snn_dt)


def test_forward_accumulates_eligibility_only_when_learning():
    net = _network(w_init_max=1.0)
    params = PlasticityParams()
    trace = EligibilityTrace.zeros(8, 6, params)
    for _ in range(20):
        result = network_forward(net, np.full(6, 20.0), 20, trace, params)
        trace = result.eligibility
    assert np.any(trace.e != 0.0)
    assert network_forward(net, np.full(6, 20.0), 20).eligibility is None
    with pytest.raises(ContractViolation):
        network_forward(net, np.zeros(6), 0)
    with pytest.raises(ContractViolation):
        network_forward(net, np.zeros(5), 1)


def test_decoder_lms_converges_to_constant_target():
    decoder = GainDecoder.initial(2, lms_rate=0.05)
    target = np.array([[0.4], [-0.1]])
    rng = np.random.default_rng(1)
    for _ in range(2000):
        decoder.trace = rng.uniform(0.0, 2.0, size=2)
        decoder_lms_update(decoder, target)
    decoder.trace = np.array([1.0, 1.0])
    np.testing.assert_allclose(decode_gain(decoder, 2, 1), target, atol=1e-3)
    with pytest.raises(ContractViolation):
        decode_gain(decoder, 3, 1)
    with pytest.raises(ContractViolation):
        decoder_lms_update(decoder, np.zeros((3, 1)))


def test_decoder_trace_bound():
    decoder = GainDecoder.initial(1, tau_dec=0.002)
    assert decoder.trace_bound(0.0005) == pytest.approx(1.0 / (1.0 - np.exp(-0.25)))
    with pytest.raises(ConfigError):
        GainDecoder.initial(1, tau_dec=0.0)


def test_checkpoint_round_trip(tmp_path):
    net = _network(seed=3)
    net.decoder.gain = np.linspace(-0.3, 0.3, 8)
    net.decoder.bias = np.linspace(0.1, 0.8, 8)
    path = save_checkpoint(Checkpoint.from_network(net), tmp_path / 'checkpoint.json')
    document = json.loads(path.read_text())
    assert document['format'] == 'spikekal-checkpoint'
    assert document['version'] == 1
    assert (document['n_in'], document['n_out']) == (6, 8)

    loaded = load_checkpoint(path)
    other = _network(seed=4)
    loaded.apply_to(other)
    np.testing.assert_array_equal(other.topology.W, net.topology.W)
    np.testing.assert_array_equal(other.decoder.gain, net.decoder.gain)
    np.testing.assert_array_equal(other.decoder.bias, net.decoder.bias)
    assert loaded.tau['tau1'] == net.lif.tau1
    assert loaded.tau_dec == net.decoder.tau_dec


def test_checkpoint_rejects_mismatch(tmp_path):
    path = save_checkpoint(Checkpoint.from_network(_network(3, 1)), tmp_path / 'lorenz.json')
    with pytest.raises(ConfigError):
        load_checkpoint(path).apply_to(_network(4, 2))

    trained = load_checkpoint(save_checkpoint(Checkpoint.from_network(_network()), tmp_path / 'linear.json'))
    slower = SpikingNetwork.build(4, 2, LifParams(tau3=0.02), GainDecoder.initial(8), np.random.default_rng(0))
    with pytest.raises(ConfigError) as info:
        trained.apply_to(slower)
    assert info.value.key == 'tau3'
    np.testing.assert_array_equal(slower.topology.W, _network(seed=0).topology.W)
    trained.apply_to(_network(seed=1))

    bad = tmp_path / 'bad.json'
    bad.write_text('{"format": "something-else"}')
    with pytest.raises(ConfigError):
        load_checkpoint(bad)
    broken = tmp_path / 'broken.json'
    broken.write_text('{\n  "format": \n')
    with pytest.raises(ConfigError) as info:
        load_checkpoint(broken)
    assert info.value.line is not None


def test_doubling_weights_never_reduces_output_spikes():
    weak, strong = _network(seed=6), _network(seed=6)
    strong.topology.W = 2.0 * strong.topology.W
    rng = np.random.default_rng(2)
    weak_counts = np.zeros(8, dtype=np.int64)
    strong_counts = np.zeros(8, dtype=np.int64)
    for _ in range(100):
        currents = rng.uniform(0.0, 6.0, size=6)
        a = network_forward(weak, currents, 20)
        b = network_forward(strong, currents, 20)
        np.testing.assert_array_equal(a.input_spike_counts, b.input_spike_counts)
        weak_counts += a.spike_counts
        strong_counts += b.spike_counts
    assert strong_counts.sum() > 0
    assert np.all(strong_counts >= weak_counts)
