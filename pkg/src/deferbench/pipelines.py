"""Training pipelines: checkpoint selection for classifiers, cost-weighted
deferral training over an extended label space, and model bundle layout.

Classifiers that defer by an uncertainty threshold are selected by the best
partial AUC (FPR in [0, 0.1]) on the validation split across per-epoch
checkpoints. Models that learn deferral end to end carry a third output for
the defer action and are selected by the smallest mean validation loss under
their own training objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from deferbench import nnet
from deferbench.errors import ConfigError, FormatError, InputShapeError, StratificationError
from deferbench.losses import LossSpec, softmax
from deferbench.metrics import DEFER, pauc
from deferbench.uq import positive_probability

DEFER_OUTPUT = 2  # extended-space defer logit index for binary problems


@dataclass
class SelectedModel:
    """A trained network at its selected checkpoint, with the selection trace."""

    network: nnet.Network
    epoch: int  # 0-based index of the chosen checkpoint
    criterion: str  # "pauc" | "loss" | "final"
    val_curve: list  # per-epoch validation metric driving the choice
    train_result: nnet.TrainResult


def _mean_val_loss(net, x_val, y_val, loss: LossSpec) -> float:
    return nnet.mean_loss(net, x_val, y_val, loss)


def train_classifier(
    x_train,
    y_train,
    x_val,
    y_val,
    config: nnet.NetConfig,
    sgd: nnet.SgdConfig,
    *,
    loss: LossSpec = LossSpec("cross_entropy"),
    sample_weights=None,
    select: str = "pauc",
) -> SelectedModel:
    """Train from scratch and pick a checkpoint on the validation split.

    select="pauc" keeps the epoch with the largest partial AUC of the
    positive-class score (earliest on ties); "loss" keeps the smallest mean
    validation loss; "final" keeps the last epoch.
    """
    if select not in ("pauc", "loss", "final"):
        raise ConfigError(f"unknown selection rule {select!r}")
    net = nnet.init_network(config)
    result = nnet.train(net, x_train, y_train, loss, sgd, sample_weights=sample_weights)

    probe = result.network.copy()
    val_curve = []
    if select == "final":
        epoch = len(result.checkpoints) - 1
    else:
        for params in result.checkpoints:
            nnet.set_params(probe, params)
            if select == "pauc":
                value = pauc(positive_probability(probe, x_val), y_val)
                if value is None:
                    raise StratificationError(
                        "validation split must contain both classes for checkpoint selection"
                    )
                val_curve.append(value)
            else:
                val_curve.append(_mean_val_loss(probe, x_val, y_val, loss))
        if select == "pauc":
            epoch = int(np.argmax(val_curve))
        else:
            epoch = int(np.argmin(val_curve))

    chosen = result.network.copy()
    nnet.set_params(chosen, result.checkpoints[epoch])
    return SelectedModel(
        network=chosen, epoch=epoch, criterion=select, val_curve=val_curve, train_result=result
    )


# ---------------------------------------------------------------------------
# Learned deferral over the extended label space
# ---------------------------------------------------------------------------


@dataclass
class ExtendedPrediction:
    """Argmax decisions over {0, 1, defer} plus renormalized class-1 scores."""

    decisions: np.ndarray  # (S,) in {0, 1, DEFER}
    scores: np.ndarray  # (S,) p1 / (p0 + p1)
    defer_probability: np.ndarray  # (S,)


def predict_extended(net: nnet.Network, batch) -> ExtendedPrediction:
    logits = nnet.forward(net, batch)
    if logits.shape[1] != DEFER_OUTPUT + 1:
        raise InputShapeError(f"expected {DEFER_OUTPUT + 1} outputs, got {logits.shape[1]}")
    probs = softmax(logits)
    decisions = np.argmax(logits, axis=1).astype(np.int64)
    decisions[decisions == DEFER_OUTPUT] = DEFER
    kept_mass = probs[:, 0] + probs[:, 1]
    scores = np.where(kept_mass > 0.0, probs[:, 1] / np.maximum(kept_mass, 1e-300), 0.5)
    return ExtendedPrediction(
        decisions=decisions, scores=scores, defer_probability=probs[:, DEFER_OUTPUT]
    )


def train_one_stage(
    x_train,
    y_train,
    x_val,
    y_val,
    config: nnet.NetConfig,
    sgd: nnet.SgdConfig,
    alpha: float,
    sample_weights=None,
) -> SelectedModel:
    """Single model trading classification against deferral at weight alpha."""
    if config.output_dim != DEFER_OUTPUT + 1:
        raise ConfigError("one-stage training needs a 3-output network")
    return train_classifier(
        x_train,
        y_train,
        x_val,
        y_val,
        config,
        sgd,
        loss=LossSpec("one_stage", alpha=alpha),
        sample_weights=sample_weights,
        select="loss",
    )


def binary_entropy(p) -> np.ndarray:
    """Natural-log entropy of Bernoulli(p), exactly 0 at p in {0, 1}."""
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    interior = (p > 0.0) & (p < 1.0)
    q = p[interior]
    out[interior] = -(q * np.log(q) + (1.0 - q) * np.log1p(-q))
    return out


def two_stage_features(members, batch) -> np.ndarray:
    """Deferral head inputs from a frozen committee, one row per sample.

    Columns: each member's positive-class probability in member order, then
    the entropy of the mean probability, then the mean member entropy. The
    head therefore sees both disagreement and shared ambiguity.
    """
    if len(members) == 0:
        raise ConfigError("two-stage features need at least one committee member")
    samples = np.stack([positive_probability(m, batch) for m in members])
    mean = samples.mean(axis=0)
    cols = [samples.T, binary_entropy(mean)[:, None], binary_entropy(samples).mean(axis=0)[:, None]]
    return np.concatenate(cols, axis=1)


def train_two_stage_head(
    members,
    x_train,
    y_train,
    x_val,
    y_val,
    head_config: nnet.NetConfig,
    sgd: nnet.SgdConfig,
    beta: float,
    sample_weights=None,
) -> SelectedModel:
    """Deferral head over committee features, defer logit weighted by beta."""
    if head_config.output_dim != DEFER_OUTPUT + 1:
        raise ConfigError("two-stage training needs a 3-output head")
    expected = len(members) + 2
    if head_config.input_dim != expected:
        raise ConfigError(
            f"head input_dim {head_config.input_dim} != committee feature width {expected}"
        )
    f_train = two_stage_features(members, x_train)
    f_val = two_stage_features(members, x_val)
    return train_classifier(
        f_train,
        y_train,
        f_val,
        y_val,
        head_config,
        sgd,
        loss=LossSpec("two_stage", beta=beta),
        sample_weights=sample_weights,
        select="loss",
    )


# ---------------------------------------------------------------------------
# Model bundles: a directory with a manifest and weight containers
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.txt"
MODEL_NAME = "model.dfb1"
POSTERIOR_NAME = "posterior.dfb1"
ENSEMBLE_INDEX_NAME = "ensemble_index.txt"


def write_manifest(path, entries: dict) -> None:
    """Canonical key=value lines sorted by key, one per line."""
    lines = []
    for key in sorted(entries):
        value = entries[key]
        if isinstance(value, float):
            value = repr(value)
        value = str(value)
        if "=" in key or "\n" in key or "\n" in value:
            raise FormatError(f"manifest entry {key!r} contains a delimiter")
        lines.append(f"{key}={value}\n")
    with open(path, "w") as fh:
        fh.writelines(lines)


def read_manifest(path) -> dict:
    entries = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}: line {lineno} is not key=value")
            key, value = line.split("=", 1)
            entries[key] = value
    return entries


def save_single_model(dirpath, network: nnet.Network, manifest: dict) -> None:
    dirpath.mkdir(parents=True, exist_ok=True)
    nnet.write_checkpoint(dirpath / MODEL_NAME, network.config, nnet.get_params(network))
    write_manifest(dirpath / MANIFEST_NAME, manifest)


def load_single_model(dirpath):
    network = nnet.load_network(dirpath / MODEL_NAME)
    return network, read_manifest(dirpath / MANIFEST_NAME)


def save_ensemble(dirpath, members, manifest: dict) -> None:
    """Member files plus an index naming them in committee order."""
    dirpath.mkdir(parents=True, exist_ok=True)
    names = []
    for i, member in enumerate(members):
        name = f"member_{i:02d}.dfb1"
        nnet.write_checkpoint(dirpath / name, member.config, nnet.get_params(member))
        names.append(name)
    with open(dirpath / ENSEMBLE_INDEX_NAME, "w") as fh:
        fh.write("".join(f"{n}\n" for n in names))
    write_manifest(dirpath / MANIFEST_NAME, manifest)


def load_ensemble(dirpath):
    index = dirpath / ENSEMBLE_INDEX_NAME
    with open(index) as fh:
        names = [line.strip() for line in fh if line.strip()]
    if not names:
        raise FormatError(f"{index}: empty committee index")
    members = [nnet.load_network(dirpath / name) for name in names]
    return members, read_manifest(dirpath / MANIFEST_NAME)
