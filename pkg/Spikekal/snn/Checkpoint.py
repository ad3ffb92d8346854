"""
Checkpoint file for the trained network (weights + decoder).

JSON document, version 1:

    {
      "format": "spikekal-checkpoint",
      "version": 1,
      "n_in": int, "n_out": int,
      "tau": {"tau1": s, "tau2": s, "tau3": s, "tau_dec": s},
      "W": [[...n_in floats...] x n_out],
      "decoder": {"gain": [...], "bias": [...], "lms_rate": float}
    }

Floats are written with repr precision, so a save/load round trip is exact.
A checkpoint only applies to a network with the same tau1, tau2 and tau3.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from Spikekal.Errors import ConfigError
from Spikekal.snn.Network import GainDecoder, SpikingNetwork


logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 'spikekal-checkpoint'
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    W: np.ndarray
    gain: np.ndarray
    bias: np.ndarray
    tau_dec: float
    lms_rate: float
    tau: dict[str, float]

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    @staticmethod
    def from_network(net: SpikingNetwork) -> Checkpoint:
        return Checkpoint(W=net.topology.W.copy(), gain=net.decoder.gain.copy(), bias=net.decoder.bias.copy(),
                          tau_dec=net.decoder.tau_dec, lms_rate=net.decoder.lms_rate,
                          tau={'tau1': net.lif.tau1, 'tau2': net.lif.tau2, 'tau3': net.lif.tau3})

    def apply_to(self, net: SpikingNetwork):
        if (self.n_out, self.n_in) != net.topology.W.shape:
            raise ConfigError(f"checkpoint is {self.n_out}×{self.n_in}, network is "
                              f"{net.topology.n_out}×{net.topology.n_in}")
        for name in ('tau1', 'tau2', 'tau3'):
            saved, current = self.tau.get(name), getattr(net.lif, name)
            if saved is None or not np.isclose(saved, current, rtol=1e-12, atol=0.0):
                raise ConfigError(f"checkpoint was trained with {name}={saved}, network uses {current}", key=name)
        net.topology.W = self.W.copy()
        net.decoder = GainDecoder(trace=np.zeros(self.n_out), tau_dec=self.tau_dec,
                                  gain=self.gain.copy(), bias=self.bias.copy(), lms_rate=self.lms_rate)


def save_checkpoint(checkpoint: Checkpoint, path) -> Path:
    path = Path(path)
    document = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'n_in': checkpoint.n_in,
        'n_out': checkpoint.n_out,
        'tau': {**checkpoint.tau, 'tau_dec': checkpoint.tau_dec},
        'W': checkpoint.W.tolist(),
        'decoder': {
            'gain': checkpoint.gain.tolist(),
            'bias': checkpoint.bias.tolist(),
            'lms_rate': checkpoint.lms_rate,
        },
    }
    path.write_text(json.dumps(document, indent=2) + '\n')
    logger.info("checkpoint written to %s", path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"checkpoint {path} is not valid JSON: {exc.msg}", line=exc.lineno) from None
    if document.get('format') != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a checkpoint file", key='format')
    if document.get('version') != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {document.get('version')}", key='version')
    try:
        W = np.array(document['W'], dtype=np.float64).reshape(document['n_out'], document['n_in'])
        tau = dict(document['tau'])
        tau_dec = float(tau.pop('tau_dec'))
        decoder = document['decoder']
        checkpoint = Checkpoint(W=W, gain=np.array(decoder['gain'], dtype=np.float64),
                                bias=np.array(decoder['bias'], dtype=np.float64), tau_dec=tau_dec,
                                lms_rate=float(decoder['lms_rate']), tau={k: float(v) for k, v in tau.items()})
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"malformed checkpoint {path}: {exc}") from None
    if checkpoint.gain.shape != (checkpoint.n_out,) or checkpoint.bias.shape != (checkpoint.n_out,):
        raise ConfigError("decoder arrays do not match n_out", key='decoder')
    return checkpoint
