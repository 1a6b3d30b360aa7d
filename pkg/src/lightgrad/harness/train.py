"""Adam training loop and checkpoint (de)serialisation of the full model."""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..checkpoint import read_checkpoint, write_checkpoint
from ..errors import CheckpointError, FormatError
from ..model import LightGrad
from ..nn import backward
from . import config as config_io
from .config import TrainConfig
from .corpus import Utterance, Vocabulary

log = logging.getLogger(__name__)

MODEL_PREFIX = "model."
ADAM_M = "adam.m."
ADAM_V = "adam.v."


@dataclass
class TrainState:
    model: LightGrad
    optimizer: torch.optim.Adam
    vocab: Vocabulary
    cfg: TrainConfig
    iteration: int = 0


def build_model(cfg: TrainConfig, vocab: Vocabulary) -> LightGrad:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        return LightGrad(cfg.encoder(len(vocab)), cfg.unet(), cfg.schedule())


def _optimizer(model, cfg: TrainConfig):
    return torch.optim.Adam(model.parameters(), lr=cfg.lr,
                            betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)


def init_state(cfg: TrainConfig, vocab: Vocabulary) -> TrainState:
    model = build_model(cfg, vocab)
    return TrainState(model, _optimizer(model, cfg), vocab, cfg)


def _text_tensor(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def _tensor_text(arr: np.ndarray) -> str:
    return arr.astype(np.uint8).tobytes().decode("utf-8")


def save(state: TrainState, path) -> None:
    entries = OrderedDict()
    entries["meta.config"] = _text_tensor(config_io.dumps(state.cfg))
    entries["meta.vocab"] = _text_tensor(state.vocab.to_text())
    entries["meta.iteration"] = np.array(state.iteration, dtype=np.float32)
    names = []
    for name, p in state.model.named_parameters():
        entries[MODEL_PREFIX + name] = p.detach().numpy()
        names.append(name)
    params = list(state.model.parameters())
    steps = [state.optimizer.state.get(p, {}).get("step") for p in params]
    if any(s is not None for s in steps):
        entries["adam.step"] = np.array(float(steps[0]), dtype=np.float32)
        for name, p in zip(names, params):
            st = state.optimizer.state[p]
            entries[ADAM_M + name] = st["exp_avg"].numpy()
            entries[ADAM_V + name] = st["exp_avg_sq"].numpy()
    write_checkpoint(path, entries)


def load(path) -> TrainState:
    entries = read_checkpoint(path)
    for key in ("meta.config", "meta.vocab", "meta.iteration"):
        if key not in entries:
            raise CheckpointError(f"missing field {key!r}", path)
    cfg = config_io.loads(_tensor_text(entries["meta.config"]), path=path)
    vocab = Vocabulary.from_text(_tensor_text(entries["meta.vocab"]))
    state = init_state(cfg, vocab)
    state.iteration = int(entries["meta.iteration"].item())
    with torch.no_grad():
        for name, p in state.model.named_parameters():
            key = MODEL_PREFIX + name
            if key not in entries:
                raise CheckpointError(f"missing parameter {key!r}", path)
            if tuple(entries[key].shape) != tuple(p.shape):
                raise CheckpointError(f"shape mismatch for {key!r}", path)
            p.copy_(torch.from_numpy(entries[key]))
    if "adam.step" in entries:
        step = float(entries["adam.step"].item())
        for name, p in state.model.named_parameters():
            state.optimizer.state[p] = {
                "step": torch.tensor(step),
                "exp_avg": torch.from_numpy(entries[ADAM_M + name].copy()),
                "exp_avg_sq": torch.from_numpy(entries[ADAM_V + name].copy()),
            }
    return state


def parameter_count(entries) -> int:
    return sum(int(np.prod(v.shape)) for k, v in entries.items() if k.startswith(MODEL_PREFIX))


def _iteration_streams(seed: int, iteration: int):
    ss = np.random.SeedSequence([seed, iteration])
    np_seed, torch_seed = ss.generate_state(2, dtype=np.uint64)
    gen = torch.Generator()
    gen.manual_seed(int(torch_seed))
    return np.random.default_rng(int(np_seed)), gen


def prepare(utts: list[Utterance], vocab: Vocabulary):
    return [(torch.tensor(vocab.encode(u.tokens), dtype=torch.long),
             torch.from_numpy(np.asarray(u.mel, dtype=np.float32))) for u in utts]


def learning_rate(cfg: TrainConfig, iteration: int) -> float:
    if not cfg.lr_decay_iters:
        return cfg.lr
    frac = min(iteration / cfg.lr_decay_iters, 1.0)
    return cfg.lr_min + (cfg.lr - cfg.lr_min) * 0.5 * (1.0 + math.cos(math.pi * frac))


def train_step(state: TrainState, data) -> tuple[float, float, float]:
    cfg = state.cfg
    for group in state.optimizer.param_groups:
        group["lr"] = learning_rate(cfg, state.iteration)
    rng, gen = _iteration_streams(cfg.seed, state.iteration)
    idx = rng.integers(0, len(data), size=cfg.batch_size)
    batch = [data[i] for i in idx]
    offsets = [int(rng.integers(0, max(y.shape[1] - cfg.segment_frames, 0) + 1)) for _, y in batch]
    state.model.train()
    losses = state.model.losses(batch, cfg.segment_frames, gen, offsets)
    total = cfg.w_diff * losses.diffusion + cfg.w_enc * losses.encoder + cfg.w_dur * losses.duration
    state.optimizer.zero_grad()
    backward(total, state.model)
    state.optimizer.step()
    state.iteration += 1
    return losses.diffusion.item(), losses.encoder.item(), losses.duration.item()


def train(cfg: TrainConfig, utts: list[Utterance], out_path=None, log_path=None,
          state: TrainState | None = None) -> TrainState:
    """Run ``cfg.iterations`` Adam steps (counted from ``state.iteration``).

    Each step's minibatch, crops, times and noise come from the stream
    ``(seed, iteration)``, so a resumed run continues exactly where the
    original would have been.
    """
    for u in utts:
        if u.mel is None or u.mel.shape[0] != cfg.n_mels:
            raise FormatError(f"utterance {u.utt_id} has no mel or wrong n_mels")
        if u.mel.shape[1] < len(u.tokens):
            raise FormatError(f"utterance {u.utt_id} has fewer frames than phonemes")
    if state is None:
        state = init_state(cfg, Vocabulary.from_utterances(utts))
    data = prepare(utts, state.vocab)
    log_file = open(log_path, "a") if log_path else None
    try:
        if log_file and state.iteration == 0:
            log_file.write("iter loss_diff loss_enc loss_dur\n")
        stop = state.iteration + cfg.iterations
        while state.iteration < stop:
            diff, enc, dur = train_step(state, data)
            if log_file:
                log_file.write(f"{state.iteration} {diff:.6f} {enc:.6f} {dur:.6f}\n")
            if state.iteration % 100 == 0:
                log.info("iter %d diff %.4f enc %.4f dur %.4f", state.iteration, diff, enc, dur)
            if out_path and cfg.checkpoint_every and state.iteration % cfg.checkpoint_every == 0:
                save(state, out_path)
    finally:
        if log_file:
            log_file.close()
    if out_path:
        save(state, out_path)
    return state


def read_loss_log(path) -> np.ndarray:
    rows = Path(path).read_text().splitlines()[1:]
    return np.array([[float(v) for v in r.split()] for r in rows if r.strip()])
