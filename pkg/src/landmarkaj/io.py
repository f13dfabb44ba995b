"""File formats: long-format event CSV, state-space JSON, curve and report output.

The long format carries one row per transition, ``id,time,from,to`` with an
optional ``censor_time`` column; a subject that never moves is declared by
a single row with time 0 and ``from == to``. Floats are written with 17
significant digits so round-trips are exact.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict

import numpy as np

from .core import EventHistory, InputError, StateSpace, validate_history
from .evaluate import ExperimentReport
from .inference import ConfidenceBand
from .markov import MarkovTestReport
from .simulate import (FrailtyModelSpec, GammaFrailty, LogNormalFrailty,
                       ILLNESS_DEATH_RECOVERY)
from .stepfun import StepFunction

log = logging.getLogger(__name__)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def load_state_space(path) -> StateSpace:
    """Read a state-space definition from JSON.

    Expected shape: ``{"states": ["work", "sick", ...],
    "transitions": [["work", "sick"], ...]}``. States may also be given as
    an integer count, and transitions as 1-based index pairs.
    """
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict) or "states" not in raw or "transitions" not in raw:
        raise InputError(f"{path}: state space JSON needs 'states' and 'transitions'")
    states = raw["states"]
    if isinstance(states, int):
        labels = tuple(str(i) for i in range(1, states + 1))
    else:
        labels = tuple(str(s) for s in states)
        if len(set(labels)) != len(labels):
            raise InputError(f"{path}: duplicate state labels")
    index = {lab: i + 1 for i, lab in enumerate(labels)}

    def resolve(x) -> int:
        if isinstance(x, str) and x in index:
            return index[x]
        try:
            i = int(x)
        except (TypeError, ValueError):
            raise InputError(f"{path}: unknown state {x!r}") from None
        if not 1 <= i <= len(labels):
            raise InputError(f"{path}: state index {i} outside 1..{len(labels)}")
        return i

    transitions = frozenset((resolve(a), resolve(b)) for a, b in raw["transitions"])
    return StateSpace(n_states=len(labels), transitions=transitions, labels=labels)


def infer_state_space(rows: list[tuple[int, str, float, str, str]]) -> StateSpace:
    """Build a state space from the labels and transitions observed in the data.

    Numeric labels are ordered numerically and mapped to their own indices
    when they form a 1-based range; other labels are ordered
    lexicographically. Only observed transitions become allowed ones, so
    validation against an inferred space cannot reject any row; pass an
    explicit space for strict checking.
    """
    labels = sorted({r[3] for r in rows} | {r[4] for r in rows})
    try:
        numeric = sorted(int(x) for x in labels)
        if numeric == list(range(1, len(numeric) + 1)):
            labels = [str(i) for i in numeric]
    except ValueError:
        pass
    index = {lab: i + 1 for i, lab in enumerate(labels)}
    transitions = {(index[a], index[b]) for _, _, _, a, b in rows if a != b}
    if not transitions:
        raise InputError("cannot infer a state space: no transition rows present")
    return StateSpace(n_states=len(labels), transitions=frozenset(transitions),
                      labels=tuple(labels))


def parse_long_csv(path, space: StateSpace | None = None, horizon: float | None = None,
                   strict: bool = True,
                   keep_ids: set[str] | None = None) -> tuple[list[EventHistory], StateSpace]:
    """Parse a long-format cohort file into validated event histories.

    Rows are grouped by subject in order of first appearance; within a
    subject, rows must already be time-ordered. With ``strict`` a malformed
    subject aborts the parse naming the subject and line; otherwise it is
    dropped with a warning. ``horizon`` defaults to the largest time in the
    file. ``keep_ids`` restricts parsing to a subject subset.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError(f"{path}: empty file")
        header = [h.strip().lower() for h in header]
        required = ["id", "time", "from", "to"]
        if header[: 4] != required:
            raise InputError(f"{path}: header must start with {','.join(required)}")
        has_censor = "censor_time" in header
        censor_col = header.index("censor_time") if has_censor else None
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 4:
                raise InputError(f"{path} line {line_no}: expected at least 4 columns")
            sid = row[0].strip()
            if keep_ids is not None and sid not in keep_ids:
                continue
            try:
                time = float(row[1])
            except ValueError:
                raise InputError(f"{path} line {line_no}: bad time {row[1]!r}") from None
            censor = None
            if has_censor and len(row) > censor_col and row[censor_col].strip():
                try:
                    censor = float(row[censor_col])
                except ValueError:
                    raise InputError(f"{path} line {line_no}: bad censor_time "
                                     f"{row[censor_col]!r}") from None
            rows.append((line_no, sid, time, row[2].strip(), row[3].strip(), censor))

    if not rows:
        raise InputError(f"{path}: no data rows")
    if space is None:
        space = infer_state_space([(ln, sid, t, a, b) for ln, sid, t, a, b, _ in rows])
    if horizon is None:
        horizon = max(max(r[2] for r in rows),
                      max((r[5] for r in rows if r[5] is not None), default=0.0))
        if horizon <= 0:
            horizon = 1.0

    by_subject: dict[str, list] = {}
    for row in rows:
        by_subject.setdefault(row[1], []).append(row)

    histories = []
    for sid, subject_rows in by_subject.items():
        try:
            histories.append(_subject_history(sid, subject_rows, space, horizon))
        except InputError as err:
            if strict:
                raise
            log.warning("dropping subject %r: %s", sid, err)
    return histories, space


def _subject_history(sid, subject_rows, space, horizon) -> EventHistory:
    censors = {c for *_, c in subject_rows if c is not None}
    if len(censors) > 1:
        raise InputError(f"subject {sid!r}: conflicting censor_time values {sorted(censors)}")
    censor = censors.pop() if censors else None

    first = subject_rows[0]
    if first[3] == first[4]:
        if len(subject_rows) > 1:
            raise InputError(f"subject {sid!r} line {first[0]}: initial-state row "
                             "(from == to) must be the subject's only row")
        if first[2] != 0.0:
            raise InputError(f"subject {sid!r} line {first[0]}: initial-state row "
                             "must have time 0")
        initial = space.state_for_label(first[3])
        history = EventHistory(subject_id=sid, initial_state=initial, transitions=(),
                               horizon=horizon, censor_time=censor)
        validate_history(history, space)
        return history

    transitions = []
    last_time = 0.0
    for line_no, _, time, frm, to, _ in subject_rows:
        if time <= last_time and transitions:
            raise InputError(f"subject {sid!r} line {line_no}: times not strictly increasing")
        if frm == to:
            raise InputError(f"subject {sid!r} line {line_no}: self-transition row")
        transitions.append((time, space.state_for_label(frm), space.state_for_label(to)))
        last_time = time
    initial = transitions[0][1]
    history = EventHistory(subject_id=sid, initial_state=initial,
                           transitions=tuple(transitions), horizon=horizon,
                           censor_time=censor)
    validate_history(history, space)
    return history


def write_long_csv(histories: list[EventHistory], space: StateSpace, path) -> None:
    """Write a cohort in long format, exactly re-parseable by :func:`parse_long_csv`."""
    has_censor = any(h.censor_time is not None for h in histories)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["id", "time", "from", "to"] + (["censor_time"] if has_censor else [])
        writer.writerow(header)
        for h in histories:
            censor = [_fmt(h.censor_time)] if has_censor and h.censor_time is not None \
                else ([""] if has_censor else [])
            if not h.transitions:
                writer.writerow([h.subject_id, "0", space.label(h.initial_state),
                                 space.label(h.initial_state)] + censor)
                continue
            for time, frm, to in h.transitions:
                writer.writerow([h.subject_id, _fmt(time), space.label(frm),
                                 space.label(to)] + censor)


def write_curve_csv(curve: StepFunction, space: StateSpace, path,
                    band: ConfidenceBand | None = None) -> None:
    """Write a probability curve (optionally with confidence bounds) as CSV.

    One row per jump time, first row at the curve's start; columns ``t``
    then ``p_<label>`` per state, plus ``lo_<label>``/``hi_<label>`` when a
    band is given (the band must share the curve's jump grid).
    """
    labels = [space.label(j) for j in range(1, space.n_states + 1)]
    header = ["t"] + [f"p_{lab}" for lab in labels]
    if band is not None:
        if band.lower.jump_times.shape != curve.jump_times.shape or \
                not np.array_equal(band.lower.jump_times, curve.jump_times):
            raise InputError("band grid does not match the curve grid")
        header += [f"lo_{lab}" for lab in labels] + [f"hi_{lab}" for lab in labels]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, t in enumerate(curve.jump_times):
            row = [_fmt(t)] + [_fmt(v) for v in np.atleast_1d(curve.values[i])]
            if band is not None:
                row += [_fmt(v) for v in np.atleast_1d(band.lower.values[i])]
                row += [_fmt(v) for v in np.atleast_1d(band.upper.values[i])]
            writer.writerow(row)


def write_markov_report_csv(reports: list[MarkovTestReport], space: StateSpace, path) -> None:
    """Per-transition test table: statistic, p-value and group sizes."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["from", "to", "method", "landmarks", "statistic", "p_value",
                         "replicates", "n_group1", "n_group2", "degenerate"])
        for r in reports:
            n1 = ";".join(str(a) for a, _ in r.group_sizes)
            n2 = ";".join(str(b) for _, b in r.group_sizes)
            writer.writerow([space.label(r.transition[0]), space.label(r.transition[1]),
                             r.method, ";".join(_fmt(s) for s in r.landmarks),
                             _fmt(r.statistic), _fmt(r.p_value), r.replicates,
                             n1, n2, int(r.degenerate)])


def load_frailty_spec(path) -> FrailtyModelSpec:
    """Read a simulation model from JSON.

    Keys: ``n`` (cohort size), ``horizon``, ``initial_state``, ``base_rates``
    (map like ``"1->2": 0.12``), optional ``states``/``transitions`` (as in
    the state-space JSON) and ``frailty`` with ``law`` in ``none|gamma|lognormal``.
    """
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise InputError(f"{path}: expected a JSON object")

    if "states" in raw or "transitions" in raw:
        if not ("states" in raw and "transitions" in raw):
            raise InputError(f"{path}: give both 'states' and 'transitions' or neither")
        labels = [str(s) for s in raw["states"]] if not isinstance(raw["states"], int) \
            else [str(i) for i in range(1, raw["states"] + 1)]
        index = {lab: i + 1 for i, lab in enumerate(labels)}
        transitions = frozenset((index[str(a)], index[str(b)]) for a, b in raw["transitions"])
        space = StateSpace(n_states=len(labels), transitions=transitions, labels=tuple(labels))
    else:
        space = ILLNESS_DEATH_RECOVERY

    def parse_pair(text: str) -> tuple[int, int]:
        parts = [p.strip() for p in str(text).split("->")]
        if len(parts) != 2:
            raise InputError(f"{path}: transition key {text!r} must look like 'j->k'")
        return space.state_for_label(parts[0]), space.state_for_label(parts[1])

    if "base_rates" in raw:
        base_rates = {parse_pair(key): float(val) for key, val in raw["base_rates"].items()}
    elif space is ILLNESS_DEATH_RECOVERY:
        from .simulate import BASE_RATES
        base_rates = dict(BASE_RATES)
    else:
        raise InputError(f"{path}: base_rates required for a custom state space")

    frailty_raw = raw.get("frailty") or {"law": "none"}
    law = str(frailty_raw.get("law", "none")).lower()
    if law == "none":
        frailty = None
    elif law == "gamma":
        transition = parse_pair(frailty_raw.get("transition", "2->1"))
        frailty = GammaFrailty(variance=float(frailty_raw.get("variance", 0.0)),
                               transition=transition)
    elif law == "lognormal":
        if "covariance" not in frailty_raw:
            raise InputError(f"{path}: lognormal frailty needs a 'covariance' matrix")
        frailty = LogNormalFrailty(covariance=np.asarray(frailty_raw["covariance"], dtype=float),
                                   mean_mode=str(frailty_raw.get("mean_mode", "unit")))
    else:
        raise InputError(f"{path}: unknown frailty law {law!r}")

    return FrailtyModelSpec(space=space, base_rates=base_rates, frailty=frailty,
                            horizon=float(raw.get("horizon", 1000.0)),
                            initial_state=space.state_for_label(str(raw.get("initial_state", "1"))),
                            n_subjects=int(raw.get("n", 1000)))


def report_to_dict(report: ExperimentReport) -> dict:
    """JSON-ready dictionary for a full experiment report."""
    config = asdict(report.config)
    levels = []
    for lv in report.levels:
        levels.append({
            "label": lv.label,
            "mrse": [asdict(row) for row in lv.mrse],
            "selection_frequency": {f"{j}->{k}": freq
                                    for (j, k), freq in sorted(lv.selection_frequency.items())},
            "oracle_times": lv.oracle_times.tolist(),
            "bias": {kind: arr.tolist() for kind, arr in lv.bias.items()},
            "variance": {kind: arr.tolist() for kind, arr in lv.variance.items()},
            "n_skipped": lv.n_skipped,
        })
    return {"config": config, "levels": levels}


def write_report_json(report: ExperimentReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_mrse_csv(report: ExperimentReport, path) -> None:
    """Flat table: one row per level x estimator x landmark x target state."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["experiment", "level", "estimator", "landmark",
                         "target_state", "mean_mrse", "mc_se", "n_datasets"])
        for lv in report.levels:
            for row in lv.mrse:
                writer.writerow([report.config.which, lv.label, row.estimator,
                                 _fmt(row.landmark), row.target_state,
                                 _fmt(row.mean), _fmt(row.mc_se), row.n_datasets])


def write_bias_variance_csv(report: ExperimentReport, path) -> None:
    """Pointwise bias and variance curves at the bias landmark, per estimator."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["experiment", "level", "estimator", "target_state",
                         "t", "bias", "variance"])
        for lv in report.levels:
            for kind in sorted(lv.bias):
                for k in range(lv.bias[kind].shape[1]):
                    for i, t in enumerate(lv.oracle_times):
                        writer.writerow([report.config.which, lv.label, kind, k + 1,
                                         _fmt(t), _fmt(lv.bias[kind][i, k]),
                                         _fmt(lv.variance[kind][i, k])])


def write_selection_csv(report: ExperimentReport, space: StateSpace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["experiment", "level", "from", "to", "selection_frequency"])
        for lv in report.levels:
            for (j, k), freq in sorted(lv.selection_frequency.items()):
                writer.writerow([report.config.which, lv.label, space.label(j),
                                 space.label(k), _fmt(freq)])
