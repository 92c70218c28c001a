"""Foreground/background HMM graph, Viterbi decoding, and forced alignment.

The decoding graph is a two-state background loop (non-keyword speech and
non-speech, mutually connected) plus one left-to-right keyword chain. A
tunable entry penalty is charged on every arc into the chain; a keyword is
hypothesized whenever the best path leaves the chain's final state (or ends
there).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .metrics import DetPoint, lower_envelope

BG_SPEECH = 0
BG_NONSPEECH = 1

_EMISSION_FLOOR = 1e-30

TAG_BG_SPEECH = "background-speech"
TAG_BG_NONSPEECH = "background-nonspeech"
TAG_KEYWORD = "keyword"


@dataclass(frozen=True)
class HmmTopology:
    states_per_phone: int = 1
    self_loop_logp: float = math.log(0.5)
    forward_logp: float = math.log(0.5)

    def __post_init__(self) -> None:
        if self.states_per_phone not in (1, 3, 5):
            raise ValueError("states_per_phone must be 1, 3, or 5")
        total = math.exp(self.self_loop_logp) + math.exp(self.forward_logp)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"self-loop + forward probability is {total}, expected 1")


@dataclass
class DecodingGraph:
    """States, transitions, and the tunable keyword entry penalty.

    `base_trans_logp` rows are stochastic (outgoing probability mass 1);
    `trans_logp` additionally charges the entry penalty on arcs into the
    chain. Same split for the start distribution.
    """

    tags: list[str]
    phone_index: list[int | None]
    base_trans_logp: np.ndarray
    trans_logp: np.ndarray
    base_start_logp: np.ndarray
    start_logp: np.ndarray
    keyword_entry_penalty: float
    keyword_phones: list[str] = field(default_factory=list)
    chain_states: list[int] = field(default_factory=list)
    topology: HmmTopology | None = None

    @property
    def n_states(self) -> int:
        return len(self.tags)

    @property
    def keyword_final_state(self) -> int | None:
        return self.chain_states[-1] if self.chain_states else None

    def is_chain_state(self, state: int) -> bool:
        return self.tags[state] == TAG_KEYWORD


@dataclass(frozen=True)
class Detection:
    start_frame: int
    end_frame: int
    score: float
    entry_penalty: float

    def __post_init__(self) -> None:
        if self.start_frame > self.end_frame:
            raise ValueError("detection with start_frame > end_frame")
        if not math.isfinite(self.score):
            raise ValueError("detection score must be finite")


@dataclass
class Alignment:
    """Per-frame state and phone ids along a forced left-to-right chain."""

    frame_states: np.ndarray
    frame_phones: np.ndarray
    frame_positions: np.ndarray


def build_kws_graph(
    keyword_phones: Sequence[str],
    topology: HmmTopology,
    entry_penalty: float = 0.0,
    known_phones: Sequence[str] | None = None,
) -> DecodingGraph:
    """Two-state background loop plus a left-to-right keyword chain.

    State ids: 0 = background speech, 1 = background non-speech, then
    len(phones) * states_per_phone chain states in keyword order. Start mass
    is split evenly between the two background states and the chain entry.
    """
    if not keyword_phones:
        raise ValueError("keyword needs at least one phone")
    if known_phones is not None:
        unknown = [p for p in keyword_phones if p not in set(known_phones)]
        if unknown:
            raise ValueError(f"unknown phone symbol(s): {unknown}")

    spp = topology.states_per_phone
    n_chain = len(keyword_phones) * spp
    n = 2 + n_chain
    tags = [TAG_BG_SPEECH, TAG_BG_NONSPEECH] + [TAG_KEYWORD] * n_chain
    phone_index: list[int | None] = [None, None] + [k // spp for k in range(n_chain)]
    chain = list(range(2, n))
    entry = chain[0]
    final = chain[-1]

    base = np.full((n, n), -np.inf)
    # Background states: half the mass self-loops, the rest splits between
    # the sibling background state and the keyword entry.
    for bg, other in ((BG_SPEECH, BG_NONSPEECH), (BG_NONSPEECH, BG_SPEECH)):
        base[bg, bg] = math.log(0.5)
        base[bg, other] = math.log(0.25)
        base[bg, entry] = math.log(0.25)
    loop, fwd = topology.self_loop_logp, topology.forward_logp
    for k, state in enumerate(chain):
        base[state, state] = loop
        if state != final:
            base[state, state + 1] = fwd
    # Leaving the keyword: forward mass returns to the background loop.
    base[final, BG_SPEECH] = fwd + math.log(0.5)
    base[final, BG_NONSPEECH] = fwd + math.log(0.5)

    base_start = np.full(n, -np.inf)
    base_start[[BG_SPEECH, BG_NONSPEECH, entry]] = math.log(1.0 / 3.0)

    trans = base.copy()
    trans[:, entry] -= entry_penalty
    start = base_start.copy()
    start[entry] -= entry_penalty

    return DecodingGraph(
        tags=tags,
        phone_index=phone_index,
        base_trans_logp=base,
        trans_logp=trans,
        base_start_logp=base_start,
        start_logp=start,
        keyword_entry_penalty=entry_penalty,
        keyword_phones=list(keyword_phones),
        chain_states=chain,
        topology=topology,
    )


def emission_logp(
    posteriors: np.ndarray, log_priors: np.ndarray | None = None
) -> np.ndarray:
    """Hybrid scaled likelihoods: log posterior (floored) minus log prior."""
    emis = np.log(np.maximum(np.asarray(posteriors, dtype=np.float64), _EMISSION_FLOOR))
    if log_priors is not None:
        emis = emis - np.asarray(log_priors, dtype=np.float64)[None, :]
    return emis


def best_path(
    trans_logp: np.ndarray, start_logp: np.ndarray, emissions: np.ndarray
) -> tuple[np.ndarray, float]:
    """Max-product path; among ties, lexicographically smallest state ids.

    Works backwards to get suffix values, then walks forward greedily taking
    the smallest state consistent with global optimality, which yields the
    lexicographic minimum over whole sequences.
    """
    n_frames, n_states = emissions.shape
    suffix = np.empty((n_frames, n_states))
    suffix[-1] = emissions[-1]
    for t in range(n_frames - 2, -1, -1):
        suffix[t] = emissions[t] + np.max(trans_logp + suffix[t + 1][None, :], axis=1)
    first = start_logp + suffix[0]
    path = np.empty(n_frames, dtype=np.int64)
    path[0] = int(np.argmax(first))
    for t in range(1, n_frames):
        path[t] = int(np.argmax(trans_logp[path[t - 1]] + suffix[t]))
    return path, float(first[path[0]])


def viterbi(
    graph: DecodingGraph,
    posteriors: np.ndarray,
    log_priors: np.ndarray | None = None,
) -> tuple[np.ndarray, list[Detection]]:
    """Decode one utterance; posterior columns map 1:1 to graph states.

    Returns the best state path and one Detection per maximal chain segment
    that reaches the keyword final state.
    """
    posteriors = np.asarray(posteriors, dtype=np.float64)
    if posteriors.ndim != 2 or posteriors.shape[1] != graph.n_states:
        raise ValueError(
            f"posteriors shape {posteriors.shape} does not match {graph.n_states} states"
        )
    emissions = emission_logp(posteriors, log_priors)
    path, _ = best_path(graph.trans_logp, graph.start_logp, emissions)

    detections: list[Detection] = []
    final = graph.keyword_final_state
    if final is None:
        return path, detections
    in_chain = np.array([graph.is_chain_state(s) for s in path])
    t = 0
    n_frames = len(path)
    while t < n_frames:
        if in_chain[t]:
            start = t
            while t + 1 < n_frames and in_chain[t + 1]:
                t += 1
            if path[t] == final:
                score = detection_score(path, start, t, posteriors, graph, log_priors)
                detections.append(
                    Detection(start, t, score, graph.keyword_entry_penalty)
                )
        t += 1
    return path, detections


def detection_score(
    path: np.ndarray,
    start: int,
    end: int,
    posteriors: np.ndarray,
    graph: DecodingGraph,
    log_priors: np.ndarray | None = None,
) -> float:
    """Per-frame log-likelihood ratio of the chain segment vs background.

    (log prob of the decoded keyword-chain path over [start, end] minus the
    log prob of the best background-only path over the same frames) divided
    by the segment length. Entry/exit arcs are outside the segment, so the
    tunable penalty does not leak into the score.
    """
    emissions = emission_logp(posteriors, log_priors)
    segment = path[start : end + 1]
    kw_logp = float(emissions[np.arange(start, end + 1), segment].sum())
    kw_logp += float(
        graph.trans_logp[segment[:-1], segment[1:]].sum()
    )

    bg_states = [BG_SPEECH, BG_NONSPEECH]
    bg_trans = graph.trans_logp[np.ix_(bg_states, bg_states)]
    scores = emissions[start, bg_states].copy()
    for t in range(start + 1, end + 1):
        scores = np.max(scores[:, None] + bg_trans, axis=0) + emissions[t, bg_states]
    bg_logp = float(scores.max())
    return (kw_logp - bg_logp) / (end - start + 1)


def forced_align(
    chain_states: Sequence[int],
    posteriors: np.ndarray,
    topology: HmmTopology,
    chain_phones: Sequence[int] | None = None,
    log_priors: np.ndarray | None = None,
) -> Alignment:
    """Viterbi constrained to a left-to-right chain with self-loops.

    Every chain position is visited at least once, in order, and every frame
    is covered. `chain_states` are posterior column ids (duplicates allowed);
    `chain_phones` optionally carries a phone id per position. Ties prefer
    staying, i.e. the lexicographically smallest position sequence.
    """
    chain_states = np.asarray(chain_states, dtype=np.int64)
    posteriors = np.asarray(posteriors, dtype=np.float64)
    n_frames = posteriors.shape[0]
    k = chain_states.size
    if k < 1:
        raise ValueError("forced chain is empty")
    if n_frames < k:
        raise ValueError(
            f"infeasible alignment: {n_frames} frames < {k} chain states"
        )
    emis = emission_logp(posteriors, log_priors)[:, chain_states]
    loop, fwd = topology.self_loop_logp, topology.forward_logp

    # suffix[t, p]: best score of frames t.. given position p at frame t,
    # ending at the last position. -inf where infeasible.
    suffix = np.full((n_frames, k), -np.inf)
    suffix[-1, -1] = emis[-1, -1]
    for t in range(n_frames - 2, -1, -1):
        stay = suffix[t + 1] + loop
        advance = np.full(k, -np.inf)
        advance[:-1] = suffix[t + 1][1:] + fwd
        suffix[t] = emis[t] + np.maximum(stay, advance)

    positions = np.empty(n_frames, dtype=np.int64)
    positions[0] = 0
    if not np.isfinite(suffix[0, 0]):
        raise ValueError("forced alignment has no feasible path")
    for t in range(1, n_frames):
        p = positions[t - 1]
        stay = loop + suffix[t, p]
        advance = fwd + suffix[t, p + 1] if p + 1 < k else -np.inf
        positions[t] = p if stay >= advance else p + 1

    frame_states = chain_states[positions]
    if chain_phones is not None:
        frame_phones = np.asarray(chain_phones, dtype=np.int64)[positions]
    else:
        frame_phones = np.full(n_frames, -1, dtype=np.int64)
    return Alignment(frame_states, frame_phones, positions)


def tune_operating_points(
    build_graph: Callable[[float], DecodingGraph],
    entry_penalties: Sequence[float],
    thresholds: Sequence[float],
    dev_set: Sequence[tuple[np.ndarray, bool]],
    log_priors: np.ndarray | None = None,
) -> tuple[list[DetPoint], list[DetPoint]]:
    """Sweep (entry penalty x threshold); return all points and the envelope.

    Each dev trial is (posterior matrix, is_keyword). A trial's score under a
    penalty is its best detection score, or -inf with no detection; it counts
    as detected at threshold t when score >= t, so a -inf threshold accepts
    everything.
    """
    if not entry_penalties or len(thresholds) == 0:
        raise ValueError("parameter grids must be non-empty")
    labels = np.array([bool(label) for _, label in dev_set])
    if not labels.any() or labels.all():
        raise ValueError("dev set needs both positive and negative trials")

    points: list[DetPoint] = []
    n_pos = int(labels.sum())
    n_neg = int((~labels).sum())
    for penalty in entry_penalties:
        graph = build_graph(penalty)
        scores = np.empty(len(dev_set))
        for i, (posteriors, _) in enumerate(dev_set):
            _, detections = viterbi(graph, posteriors, log_priors)
            scores[i] = max((d.score for d in detections), default=-np.inf)
        for threshold in thresholds:
            detected = scores >= threshold
            frr = float((~detected[labels]).sum()) / n_pos
            far = float(detected[~labels].sum()) / n_neg
            points.append(
                DetPoint(far, frr, {"entry_penalty": float(penalty), "threshold": float(threshold)})
            )
    return points, lower_envelope(points)


def graph_to_text(graph: DecodingGraph) -> str:
    """Human-readable listing of states and arcs for debugging."""
    lines = [f"states: {graph.n_states}  entry_penalty: {graph.keyword_entry_penalty:g}"]
    for s in range(graph.n_states):
        phone = graph.phone_index[s]
        label = graph.tags[s] if phone is None else (
            f"{graph.tags[s]}[{graph.keyword_phones[phone]}]"
        )
        start = graph.start_logp[s]
        start_txt = f" start={start:.4f}" if np.isfinite(start) else ""
        lines.append(f"state {s} {label}{start_txt}")
        for d in range(graph.n_states):
            if np.isfinite(graph.trans_logp[s, d]):
                lines.append(f"  -> {d} logp={graph.trans_logp[s, d]:.4f}")
    return "\n".join(lines) + "\n"
