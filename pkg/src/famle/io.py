"""File formats: JSON checkpoints, dataset CSV + spec sidecar, tabular logs."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .model import EmbeddingTable, ModelParams, Normalizer, TransitionDataset
from .situations import SituationSpec
from .trainers import IterationRecord, MetaResult

FORMAT_VERSION = 1


def _floats(a) -> list:
    # json writes floats with repr(), the shortest string that round-trips exactly
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def checkpoint_dict(result: MetaResult, method: str = "famle") -> dict:
    theta, table = result.theta_meta, result.embedding_table
    norm = theta.normalizer
    return {
        "format_version": FORMAT_VERSION,
        "method": method,
        "architecture": {
            "layer_sizes": theta.layer_sizes,
            "state_dim": theta.state_dim,
            "action_dim": theta.action_dim,
            "embed_dim": theta.embed_dim,
            "hidden_activation": "tanh",
            "output_activation": "identity",
            "angle_dims": list(theta.angle_dims),
        },
        "normalization": {k: _floats(v) for k, v in norm.arrays().items()},
        "parameters": [{"weight": _floats(w), "bias": _floats(b)}
                       for w, b in zip(theta.weights, theta.biases)],
        "embedding_table": {"index_order": list(range(len(table))),
                            "entries": [_floats(row) for row in table.entries]},
    }


def checkpoint_from_dict(doc: dict) -> MetaResult:
    if doc.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")
    arch = doc["architecture"]
    if arch["hidden_activation"] != "tanh" or arch["output_activation"] != "identity":
        raise ConfigurationError("unsupported activation tags")
    sizes = arch["layer_sizes"]
    weights, biases = [], []
    for (fan_in, fan_out), layer in zip(zip(sizes[:-1], sizes[1:]), doc["parameters"]):
        weights.append(np.array(layer["weight"], dtype=float).reshape(fan_out, fan_in))
        biases.append(np.array(layer["bias"], dtype=float))
    n = doc["normalization"]
    norm = Normalizer(**{k: np.array(v, dtype=float) for k, v in n.items()})
    theta = ModelParams(weights, biases, arch["state_dim"], arch["action_dim"], arch["embed_dim"],
                        norm, tuple(arch["angle_dims"]))
    emb = doc["embedding_table"]
    rows = [emb["entries"][i] for i in emb["index_order"]]
    table = EmbeddingTable(np.array(rows, dtype=float).reshape(len(rows), arch["embed_dim"]))
    return MetaResult(theta, table, [])


def save_checkpoint(result: MetaResult, path, method: str = "famle"):
    Path(path).write_text(json.dumps(checkpoint_dict(result, method), indent=1))


def load_checkpoint(path) -> MetaResult:
    return checkpoint_from_dict(json.loads(Path(path).read_text()))


def write_rows(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def fmt(x) -> str:
    return repr(float(x))


def save_dataset(data: TransitionDataset, path, spec: SituationSpec | None = None):
    """CSV with columns ``s_*, a_*, ns_*``; the spec goes to a ``.json`` sidecar."""
    path = Path(path)
    sd, ad = data.state_dim, data.action_dim
    header = [f"s_{i}" for i in range(sd)] + [f"a_{i}" for i in range(ad)] + [f"ns_{i}" for i in range(sd)]
    rows = [[fmt(x) for x in np.concatenate([s, a, ns])]
            for s, a, ns in zip(data.states, data.actions, data.next_states)]
    write_rows(path, header, rows)
    if spec is not None:
        sidecar = {"situation_index": data.situation_index, "state_dim": sd, "action_dim": ad,
                   "n_transitions": len(data), "spec": spec.to_json()}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1))


def load_dataset(path):
    """Returns ``(dataset, spec or None)``."""
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = np.array([[float(x) for x in r] for r in reader], dtype=float).reshape(-1, len(header))
    sd = sum(h.startswith("s_") for h in header)
    ad = sum(h.startswith("a_") for h in header)
    spec, index = None, None
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        spec, index = SituationSpec.from_json(meta["spec"]), meta["situation_index"]
    data = TransitionDataset(rows[:, :sd], rows[:, sd:sd + ad], rows[:, sd + ad:], index)
    return data, spec


def save_training_log(log, path):
    write_rows(path, ["iteration", "situation_index", "loss_before", "loss_after"],
                [[r.iteration, r.situation_index, fmt(r.loss_before), fmt(r.loss_after)] for r in log])


def load_training_log(path) -> list:
    with open(path, newline="") as f:
        return [IterationRecord(int(r["iteration"]), int(r["situation_index"]),
                                float(r["loss_before"]), float(r["loss_after"]))
                for r in csv.DictReader(f)]


def save_episode(episode, path):
    """Per-step episode log."""
    if not episode.steps:
        write_rows(path, ["step", "reward", "cumulative_reward", "selected_index"], [])
        return
    sd, ad = len(episode.steps[0].state), len(episode.steps[0].action)
    header = (["step"] + [f"s_{i}" for i in range(sd)] + [f"a_{i}" for i in range(ad)]
              + ["reward", "cumulative_reward", "selected_index", "pre_loss", "post_loss"])
    rows = []
    for rec, cum in zip(episode.steps, episode.cumulative_rewards):
        rows.append([rec.step, *map(fmt, rec.state), *map(fmt, rec.action), fmt(rec.reward), fmt(cum),
                     rec.selected_index, fmt(rec.pre_loss), fmt(rec.post_loss)])
    write_rows(path, header, rows)


def save_adaptations(episode, path):
    """Per-adaptation diagnostics: selection and losses for every embedding."""
    n = max((len(e.embedding_losses) for e in episode.adaptations), default=0)
    header = ["step", "selected_index", "pre_loss", "post_loss"] + [f"loss_h{i}" for i in range(n)]
    write_rows(path, header, [[e.step, e.selected_index, fmt(e.pre_loss), fmt(e.post_loss),
                                *map(fmt, e.embedding_losses)] for e in episode.adaptations])
