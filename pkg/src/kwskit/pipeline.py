"""Experiment stages: generate, augment, train, decode, evaluate, reproduce.

Every stage derives its randomness from the experiment seed hashed with the
stage name, writes its artifacts under the output directory, and drops a
run-record JSON beside them, so any stage can be re-run independently and
reproduces its outputs byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import platform
from dataclasses import replace
from pathlib import Path

import numpy as np

import kwskit

from .audio import load_wav
from .augment import AugmentationSpec, SirRange, augment_corpus, synth_rir
from .config import ExperimentConfig
from .corpus import (
    forced_chain_from_segments,
    generate_corpus,
    generate_interference,
    targets_from_segments,
)
from .decoder import (
    HmmTopology,
    build_kws_graph,
    forced_align,
    viterbi,
)
from .features import compute_features
from .manifest import read_manifest, resolve_wav_path
from .metrics import DetCurve, auc, det_curve, emit_plot_data, lower_envelope, relative_reduction
from .model import AcousticModel, ModelConfig, forward, init_model, load_model, save_model, train
from .seeds import derive_seed


class MissingArtifactError(FileNotFoundError):
    """An upstream stage output is absent; the message names the producer."""


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(
            f"missing {path}; run `kwskit {producer}` first"
        )
    return path


# ---------------------------------------------------------------------------
# Layout helpers


def corpus_dir(out: Path) -> Path:
    return out / "corpus"


def interference_dir(out: Path, kind: str) -> Path:
    return out / "interference" / kind


def corpora_dir(out: Path, name: str) -> Path:
    return out / "corpora" / name


def model_path(out: Path, name: str) -> Path:
    return out / "models" / f"{name}.json"


def detections_path(out: Path, model_name: str, condition: str) -> Path:
    return out / "detections" / f"{model_name}__{condition}.jsonl"


def eval_dir(out: Path) -> Path:
    return out / "eval"


# ---------------------------------------------------------------------------
# Shared pieces


def build_topology(cfg: ExperimentConfig) -> HmmTopology:
    p_loop = cfg.decoder.self_loop_prob
    return HmmTopology(
        states_per_phone=cfg.decoder.states_per_phone,
        self_loop_logp=float(np.log(p_loop)),
        forward_logp=float(np.log(1.0 - p_loop)),
    )


def build_graph(cfg: ExperimentConfig, entry_penalty: float = 0.0):
    return build_kws_graph(
        cfg.corpus.keyword,
        build_topology(cfg),
        entry_penalty,
        known_phones=cfg.corpus.phone_set.symbols,
    )


def build_rirs(cfg: ExperimentConfig) -> list:
    rirs = []
    for rt60 in cfg.rirs.rt60_seconds:
        length = max(1, int(round(rt60 * cfg.corpus.sample_rate)))
        seed = derive_seed(cfg.seed, f"rir:{rt60:g}")
        rirs.append(synth_rir(rt60, length, seed, cfg.corpus.sample_rate, f"rt60-{rt60:g}"))
    return rirs


def threshold_grid(cfg: ExperimentConfig) -> np.ndarray:
    d = cfg.decoder
    return np.linspace(d.threshold_min, d.threshold_max, d.threshold_count)


def _frame_geometry(cfg: ExperimentConfig) -> tuple[int, int]:
    sr = cfg.corpus.sample_rate
    win = int(round(cfg.features.window_ms * sr / 1000.0))
    hop = int(round(cfg.features.hop_ms * sr / 1000.0))
    return win, hop


# ---------------------------------------------------------------------------
# Stages


def run_gen_corpus(cfg: ExperimentConfig, out: Path) -> dict:
    """Render the clean corpus and both interference collections."""
    out = Path(out)
    corpus_cfg = replace(cfg.corpus, seed=derive_seed(cfg.seed, "corpus"))
    manifests = generate_corpus(corpus_cfg, corpus_dir(out))
    for kind, seconds in (
        ("music", cfg.interference.music_seconds),
        ("movie", cfg.interference.movie_seconds),
    ):
        generate_interference(
            kind,
            seconds,
            derive_seed(cfg.seed, f"interference:{kind}"),
            interference_dir(out, kind),
            cfg.interference.clip_seconds,
            cfg.corpus.sample_rate,
        )
    outputs = [corpus_dir(out)] + [interference_dir(out, k) for k in ("music", "movie")]
    write_run_record(out, "gen-corpus", cfg, outputs)
    return manifests


def run_augment(cfg: ExperimentConfig, out: Path, spec_name: str, jobs: int = 1) -> Path:
    """Corrupt one split according to a named spec; returns the manifest path."""
    out = Path(out)
    spec_cfg = cfg.spec_by_name(spec_name)
    clean_manifest = _require(
        corpus_dir(out) / f"{spec_cfg.split}.jsonl", "gen-corpus"
    )
    interference_manifest = _require(
        interference_dir(out, spec_cfg.kind) / "manifest.jsonl", "gen-corpus"
    )
    spec = AugmentationSpec(
        sir_range=SirRange(*spec_cfg.sir_db),
        interference_manifest=interference_manifest,
        rir_set=build_rirs(cfg),
        master_seed=derive_seed(cfg.seed, f"augment:{spec_name}"),
    )
    target_dir = corpora_dir(out, spec_name)
    augment_corpus(clean_manifest, spec, target_dir, jobs=jobs)
    write_run_record(out, f"augment:{spec_name}", cfg, [target_dir])
    return target_dir / "manifest.jsonl"


def _training_manifest(cfg: ExperimentConfig, out: Path, corpus_name: str) -> Path:
    if corpus_name == "clean":
        return _require(corpus_dir(out) / "train.jsonl", "gen-corpus")
    return _require(
        corpora_dir(out, corpus_name) / "manifest.jsonl",
        f"augment --spec {corpus_name}",
    )


def _load_dataset(cfg: ExperimentConfig, manifest_path: Path):
    """(features, kw targets, aux targets) triples for every manifest entry.

    Targets always come from the construction-time segment boundaries, which
    the corrupted manifests inherit from the clean corpus.
    """
    graph = build_graph(cfg)
    win, hop = _frame_geometry(cfg)
    dataset = []
    for entry in read_manifest(manifest_path):
        audio = load_wav(resolve_wav_path(manifest_path, entry))
        feats = compute_features(audio, cfg.features)
        kw_t, aux_t = targets_from_segments(
            entry["segments"],
            cfg.corpus.keyword,
            cfg.corpus.phone_set,
            graph,
            feats.num_frames,
            win,
            hop,
        )
        dataset.append((feats, kw_t, aux_t))
    return dataset, graph


def _realigned_targets(cfg: ExperimentConfig, out: Path, bootstrap: AcousticModel, dataset, manifest_path: Path):
    """Replace construction targets by forced-alignment targets on clean audio."""
    graph = build_graph(cfg)
    topology = build_topology(cfg)
    clean_manifest = _require(corpus_dir(out) / "train.jsonl", "gen-corpus")
    clean_by_id = {e["id"]: e for e in read_manifest(clean_manifest)}
    entries = read_manifest(manifest_path)
    realigned = []
    for (feats, _, _), entry in zip(dataset, entries):
        clean_entry = clean_by_id[entry["id"]]
        clean_audio = load_wav(resolve_wav_path(clean_manifest, clean_entry))
        clean_feats = compute_features(clean_audio, cfg.features)
        kw_post, _ = forward(bootstrap, clean_feats)
        chain_states, chain_phones = forced_chain_from_segments(
            clean_entry["segments"], cfg.corpus.keyword, cfg.corpus.phone_set, graph
        )
        alignment = forced_align(
            chain_states, kw_post, topology, chain_phones, bootstrap.log_priors
        )
        realigned.append((feats, alignment.frame_states, alignment.frame_phones))
    return realigned


def _estimate_log_priors(dataset, n_states: int) -> np.ndarray:
    counts = np.zeros(n_states)
    for _, kw_t, _ in dataset:
        counts += np.bincount(kw_t, minlength=n_states)
    priors = counts / counts.sum()
    return np.log(np.maximum(priors, 1e-8))


def run_train(
    cfg: ExperimentConfig, out: Path, corpus_name: str, realign: bool = False
) -> Path:
    """Train one acoustic model on a named corpus and serialize it."""
    out = Path(out)
    manifest_path = _training_manifest(cfg, out, corpus_name)
    dataset, graph = _load_dataset(cfg, manifest_path)
    m = cfg.model
    model_cfg = ModelConfig(
        keyword_states=graph.n_states,
        aux_phones=cfg.corpus.phone_set.num_aux_classes,
        hidden_layers=m.hidden_layers,
        hidden_units=m.hidden_units,
        loss_weight_keyword=m.loss_weight_keyword,
        loss_weight_aux=m.loss_weight_aux,
        learning_rate=m.learning_rate,
        batch_size=m.batch_size,
        epochs=m.epochs,
        init_seed=derive_seed(cfg.seed, f"init:{corpus_name}"),
    )
    model = init_model(model_cfg, dataset[0][0].dim)
    shuffle_seed = derive_seed(cfg.seed, f"shuffle:{corpus_name}")
    trained, history = train(model, dataset, shuffle_seed=shuffle_seed)
    if realign:
        dataset = _realigned_targets(cfg, out, trained, dataset, manifest_path)
        model = init_model(model_cfg, dataset[0][0].dim)
        trained, second = train(model, dataset, shuffle_seed=shuffle_seed)
        history = history + second
    trained.log_priors = _estimate_log_priors(dataset, graph.n_states)

    path = model_path(out, corpus_name)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(trained, path)
    with open(path.with_suffix(".history.json"), "w", encoding="utf-8") as fh:
        json.dump(history, fh, indent=1)
        fh.write("\n")
    write_run_record(out, f"train:{corpus_name}", cfg, [path])
    return path


def _condition_manifest(cfg: ExperimentConfig, out: Path, condition: str) -> Path:
    if condition == "clean":
        return _require(corpus_dir(out) / "test.jsonl", "gen-corpus")
    return _require(
        corpora_dir(out, condition) / "manifest.jsonl",
        f"augment --spec {condition}",
    )


def run_decode(cfg: ExperimentConfig, out: Path, model_name: str, condition: str) -> Path:
    """Decode a test condition with one model over the entry-penalty grid."""
    out = Path(out)
    model = load_model(_require(model_path(out, model_name), f"train --corpus {model_name}"))
    manifest_path = _condition_manifest(cfg, out, condition)
    entries = read_manifest(manifest_path)
    topology = build_topology(cfg)

    rows = []
    graphs = {
        penalty: build_kws_graph(
            cfg.corpus.keyword, topology, penalty, cfg.corpus.phone_set.symbols
        )
        for penalty in cfg.decoder.entry_penalties
    }
    for entry in entries:
        audio = load_wav(resolve_wav_path(manifest_path, entry))
        feats = compute_features(audio, cfg.features)
        kw_post, _ = forward(model, feats)
        for penalty, graph in graphs.items():
            _, detections = viterbi(graph, kw_post, model.log_priors)
            for det in detections:
                rows.append(
                    {
                        "id": entry["id"],
                        "start_frame": det.start_frame,
                        "end_frame": det.end_frame,
                        "score": det.score,
                        "entry_penalty": penalty,
                        "threshold": None,
                    }
                )
    path = detections_path(out, model_name, condition)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row))
            fh.write("\n")
    write_run_record(out, f"decode:{model_name}:{condition}", cfg, [path])
    return path


def _trials_by_penalty(cfg, detection_rows, labels: dict[str, str]):
    """Best score per (utterance, penalty); None when nothing was detected."""
    best: dict[tuple[str, float], float] = {}
    for row in detection_rows:
        key = (row["id"], row["entry_penalty"])
        if key not in best or row["score"] > best[key]:
            best[key] = row["score"]
    trials = {}
    for penalty in cfg.decoder.entry_penalties:
        positives, negatives = [], []
        for uid, label in sorted(labels.items()):
            score = best.get((uid, penalty))
            (positives if label == "keyword" else negatives).append((uid, score))
        trials[penalty] = (positives, negatives)
    return trials


def evaluate_condition(cfg: ExperimentConfig, out: Path, model_name: str, condition: str) -> DetCurve:
    """DET envelope over the (entry penalty x threshold) operating grid."""
    det_path = _require(
        detections_path(out, model_name, condition),
        f"decode --model {model_name} --condition {condition}",
    )
    manifest_path = _condition_manifest(cfg, out, condition)
    labels = {e["id"]: e["label"] for e in read_manifest(manifest_path)}
    rows = read_manifest(det_path)
    from .metrics import TrialSet

    points = []
    for penalty, (positives, negatives) in _trials_by_penalty(cfg, rows, labels).items():
        curve = det_curve(TrialSet(positives, negatives))
        for p in curve.points:
            params = dict(p.params)
            params["entry_penalty"] = penalty
            points.append(replace(p, params=params))
    return DetCurve(lower_envelope(points))


def run_eval(cfg: ExperimentConfig, out: Path, far_range: tuple[float, float] | None = None) -> dict:
    """Evaluate every trained model on every condition; write tables and plots.

    The summary table mirrors the usual layout: one row per model with its
    AUC on the corrupted test condition and the reduction relative to the
    clean baseline.
    """
    out = Path(out)
    lo, hi = far_range if far_range is not None else (cfg.evaluation.far_low, cfg.evaluation.far_high)
    if not (lo < hi):
        raise ValueError(f"invalid FAR range [{lo}, {hi}]")
    edir = eval_dir(out)
    edir.mkdir(parents=True, exist_ok=True)

    aucs: dict[str, dict[str, float]] = {}
    curves_by_condition: dict[str, list] = {c: [] for c in cfg.condition_names}
    for condition in cfg.condition_names:
        for model_name in cfg.model_names:
            curve = evaluate_condition(cfg, out, model_name, condition)
            aucs.setdefault(model_name, {})[condition] = auc(curve, lo, hi)
            curves_by_condition[condition].append((model_name, curve))
        emit_plot_data(curves_by_condition[condition], edir / f"det_{condition}")

    corrupted = cfg.test_condition.name
    baseline = aucs["clean"][corrupted]
    summary_rows = []
    for model_name in cfg.model_names:
        value = aucs[model_name][corrupted]
        reduction = relative_reduction(baseline, value) if baseline > 0 else 0.0
        summary_rows.append((model_name, value, reduction))

    text_lines = [
        f"AUC over FAR [{lo:g}, {hi:g}] on condition {corrupted!r} (lower is better)",
        f"{'Model':<16} {'AUC':>8} {'% Reduction':>12}",
    ]
    for name, value, reduction in summary_rows:
        text_lines.append(f"{name:<16} {value:>8.3f} {reduction:>11.1f}%")
    summary_text = "\n".join(text_lines) + "\n"
    (edir / "summary.txt").write_text(summary_text, encoding="utf-8")
    with open(edir / "summary.csv", "w", encoding="utf-8") as fh:
        fh.write("model,auc,percent_reduction\n")
        for name, value, reduction in summary_rows:
            fh.write(f"{name},{value!r},{reduction!r}\n")
    with open(edir / "auc_by_condition.csv", "w", encoding="utf-8") as fh:
        fh.write("model,condition,auc\n")
        for model_name in cfg.model_names:
            for condition in cfg.condition_names:
                fh.write(f"{model_name},{condition},{aucs[model_name][condition]!r}\n")
    write_run_record(out, "eval", cfg, [edir])
    return {"aucs": aucs, "summary": summary_rows, "summary_text": summary_text}


def run_reproduce(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> dict:
    """Full pipeline: generate, augment all specs, train, decode, evaluate."""
    out = Path(out)
    run_gen_corpus(cfg, out)
    for spec in cfg.train_specs:
        run_augment(cfg, out, spec.name, jobs=jobs)
    run_augment(cfg, out, cfg.test_condition.name, jobs=jobs)
    for model_name in cfg.model_names:
        run_train(cfg, out, model_name)
    for model_name in cfg.model_names:
        for condition in cfg.condition_names:
            run_decode(cfg, out, model_name, condition)
    result = run_eval(cfg, out)
    write_run_record(out, "reproduce", cfg, [out / "eval"])
    return result


# ---------------------------------------------------------------------------
# Run records


def _hash_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_run_record(out: Path, command: str, cfg: ExperimentConfig, outputs: list[Path]) -> Path:
    """Provenance record: seed, config digest, versions, output hashes."""
    out = Path(out)
    files: dict[str, str] = {}
    for target in outputs:
        target = Path(target)
        if target.is_dir():
            for path in sorted(target.rglob("*")):
                if path.is_file() and not path.name.endswith(".run.json"):
                    files[path.relative_to(out).as_posix()] = _hash_file(path)
        elif target.is_file():
            files[target.relative_to(out).as_posix()] = _hash_file(target)
    record = {
        "command": command,
        "seed": cfg.seed,
        "config_sha256": hashlib.sha256(
            json.dumps(_config_digest(cfg), sort_keys=True).encode()
        ).hexdigest(),
        "outputs": files,
        "versions": {
            "kwskit": kwskit.__version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    records_dir = out / "run_records"
    records_dir.mkdir(parents=True, exist_ok=True)
    safe_name = command.replace(":", "_").replace(" ", "_")
    path = records_dir / f"{safe_name}.run.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def _config_digest(cfg: ExperimentConfig):
    def unwrap(value):
        if hasattr(value, "__dataclass_fields__"):
            return {k: unwrap(getattr(value, k)) for k in value.__dataclass_fields__}
        if isinstance(value, (list, tuple)):
            return [unwrap(v) for v in value]
        if isinstance(value, dict):
            return {str(k): unwrap(v) for k, v in value.items()}
        return value
    return unwrap(cfg)
