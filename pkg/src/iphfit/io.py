"""File formats: JSON documents for models, chains, densities and jobs; CSV tables.

Every structured document is a JSON object with a ``"type"`` field
(``model``, ``chain``, ``density`` or a job type). Documents are validated
against the schemas below before use, and unknown fields are rejected.
"""

from __future__ import annotations

import csv
import io as _io
import json
import re
from pathlib import Path

import jsonschema
import numpy as np

from . import dist
from .model import DctmcChain, DetEvent, Event, Gsmp, PhChain, deterministic, exponential, general

NUMBER = {"anyOf": [{"type": "number"}, {"type": "string", "pattern": r"^\s*[0-9.eE+-]+(\s*/\s*[0-9.eE+-]+)?\s*$"}]}
DENSITY = {"type": "object", "required": ["kind"]}  # checked in detail by dist.from_dict

EVENT_SCHEMA = {
    "type": "object",
    "required": ["name", "kind"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "kind": {"enum": ["exponential", "deterministic", "general"]},
        "rate": NUMBER,
        "delay": NUMBER,
        "density": DENSITY,
    },
}

MODEL_SCHEMA = {
    "type": "object",
    "required": ["type", "states", "events", "active", "succ", "init"],
    "additionalProperties": False,
    "properties": {
        "type": {"const": "model"},
        "states": {"type": "array", "items": {"type": "string"}},
        "events": {"type": "array", "items": EVENT_SCHEMA},
        "active": {"type": "object", "additionalProperties": {"type": "array", "items": {"type": "string"}}},
        "succ": {"type": "array", "items": {
            "type": "object", "required": ["state", "event", "to"], "additionalProperties": False,
            "properties": {"state": {"type": "string"}, "event": {"type": "string"},
                           "to": {"type": "object", "additionalProperties": NUMBER}}}},
        "init": {"type": "object", "additionalProperties": NUMBER},
        "tie_order": {"type": "array", "items": {"type": "string"}},
        "annotations": {"type": "object"},
    },
}

CHAIN_SCHEMA = {
    "type": "object",
    "required": ["type", "rates", "succ", "init"],
    "additionalProperties": False,
    "properties": {
        "type": {"const": "chain"},
        "rates": {"type": "array", "items": {"type": "number"}},
        "succ": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "init": {"type": "array", "items": {"type": "number"}},
        "det_events": {"type": "array", "items": {
            "type": "object", "required": ["name", "delay", "active", "target"], "additionalProperties": False,
            "properties": {"name": {"type": "string"}, "delay": NUMBER,
                           "active": {"type": "array", "items": {"type": "integer"}},
                           "target": {"type": "array", "items": {"type": "number"}}}}},
        "closed_form": {"anyOf": [DENSITY, {"type": "null"}]},
        "segment_forms": {"anyOf": [{"type": "array"}, {"type": "null"}]},
        "report": {"type": "object"},
    },
}

DENSITY_SCHEMA = {
    "type": "object",
    "required": ["type", "density"],
    "additionalProperties": False,
    "properties": {"type": {"const": "density"}, "density": DENSITY, "summary": {"type": "object"}},
}

MODEL_REF = {"anyOf": [{"type": "string"}, {
    "type": "object", "required": ["builtin"], "additionalProperties": False,
    "properties": {"builtin": {"type": "string"}, "params": {"type": "object"}}}]}

EVENT_PLAN = {
    "type": "object", "additionalProperties": False, "required": ["method"],
    "properties": {"method": {"type": "string"}, "fitter": {"enum": ["erlang", "hyper-erlang"]},
                   "n": {"type": "integer", "minimum": 1},
                   "mode": {"enum": ["exponential", "equidistant"]},
                   "options": {"type": "object"}},
}

QUERY = {
    "type": "object", "required": ["kind"], "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["transient", "reach", "absorption"]},
        "t": {"type": "number", "minimum": 0},
        "states": {"type": "array", "items": {"type": "string"}},
        "goal": {"type": "array", "items": {"type": "string"}},
        "bins": {"type": "array", "items": {"type": "number"}},
        "engine": {"enum": ["auto", "uniformization", "delta", "subordinated"]},
        "delta": {"type": "number", "exclusiveMinimum": 0},
        "label": {"type": "string"},
    },
}

APPROX_JOB = {
    "type": "object", "required": ["type", "model", "plan"], "additionalProperties": False,
    "properties": {"type": {"const": "approximate"}, "model": MODEL_REF,
                   "plan": {"type": "object", "additionalProperties": EVENT_PLAN},
                   "cap": {"type": "integer", "minimum": 1}, "prune": {"type": "boolean"},
                   "rewrite_constant": {"type": "boolean"}},
}

ANALYZE_JOB = {
    "type": "object", "required": ["type", "model", "queries"], "additionalProperties": False,
    "properties": {"type": {"const": "analyze"}, "model": MODEL_REF,
                   "queries": {"type": "array", "items": QUERY, "minItems": 1}},
}

SIMULATE_JOB = {
    "type": "object", "required": ["type", "model", "runs", "query"], "additionalProperties": False,
    "properties": {"type": {"const": "simulate"}, "model": MODEL_REF,
                   "runs": {"type": "integer", "minimum": 1}, "query": QUERY,
                   "trace": {"type": "integer", "minimum": 0},
                   "max_steps": {"type": "integer", "minimum": 1}},
}

SWEEP_JOB = {
    "type": "object", "required": ["type", "kind"], "additionalProperties": False,
    "properties": {
        "type": {"const": "sweep"},
        "kind": {"enum": ["error-vs-phases", "shift-law", "collision"]},
        "density": {"anyOf": [{"type": "string"}, DENSITY]},
        "fitter": {"enum": ["erlang", "hyper-erlang"]},
        "fitter_options": {"type": "object"},
        "ns": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "methods": {"type": "array", "items": {"type": "string"}},
        "shifts": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "target_variance": {"type": "number", "exclusiveMinimum": 0},
        "err_threshold": {"type": "number", "exclusiveMinimum": 0},
        "cap": {"type": "integer", "minimum": 1},
        "params": {"type": "object"},
        "ph_phases": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "iph_phases": {"type": "array", "items": {"type": "integer", "minimum": 2}},
        "tx_phases": {"type": "integer", "minimum": 1},
        "delta": {"type": "number", "exclusiveMinimum": 0},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "runs": {"type": "integer", "minimum": 1},
    },
}

SCHEMAS = {"model": MODEL_SCHEMA, "chain": CHAIN_SCHEMA, "density": DENSITY_SCHEMA,
           "approximate": APPROX_JOB, "analyze": ANALYZE_JOB, "simulate": SIMULATE_JOB, "sweep": SWEEP_JOB}


class FormatError(ValueError):
    """A document failed validation."""


def validate_document(doc, expected: str | None = None) -> str:
    """Check ``doc`` against its schema; returns its type."""
    if not isinstance(doc, dict) or "type" not in doc:
        raise FormatError("document must be an object with a 'type' field")
    kind = doc["type"]
    if expected is not None and kind != expected:
        raise FormatError(f"expected a {expected} document, got {kind!r}")
    if kind not in SCHEMAS:
        raise FormatError(f"unknown document type {kind!r}")
    errors = sorted(jsonschema.Draft202012Validator(SCHEMAS[kind]).iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        msgs = [f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errors[:10]]
        raise FormatError("; ".join(msgs))
    return kind


def load(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc


def dumps(doc) -> str:
    return json.dumps(_plain(doc), indent=2) + "\n"


def save(doc, path):
    Path(path).write_text(dumps(doc))


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, frozenset | set):
        return sorted(_plain(v) for v in x)
    return x


# -- densities ------------------------------------------------------------------


def density_doc(d: dist.Density, summary: dict | None = None) -> dict:
    out = {"type": "density", "density": d.to_dict()}
    if summary:
        out["summary"] = summary
    return out


def density_from_doc(doc) -> dist.Density:
    if "type" not in doc:
        return dist.from_dict(doc)
    validate_document(doc, "density")
    return dist.from_dict(doc["density"])


def load_density(ref) -> dist.Density:
    return density_from_doc(load(ref) if isinstance(ref, (str, Path)) else ref)


# -- models ---------------------------------------------------------------------


def _event_doc(e: Event) -> dict:
    if e.is_exponential:
        return {"name": e.name, "kind": "exponential", "rate": e.rate}
    if e.is_deterministic:
        return {"name": e.name, "kind": "deterministic", "delay": e.delay}
    return {"name": e.name, "kind": "general", "density": e.density.to_dict()}


def model_doc(m: Gsmp) -> dict:
    return {
        "type": "model",
        "states": list(m.states),
        "events": [_event_doc(e) for e in m.events],
        "active": {s: sorted(m.active_in(s)) for s in m.states},
        "succ": [{"state": s, "event": e, "to": dict(to)} for (s, e), to in m.succ.items()],
        "init": dict(m.init),
        "tie_order": list(m.tie_order),
        "annotations": dict(m.annotations),
    }


def model_from_doc(doc) -> Gsmp:
    validate_document(doc, "model")
    events = []
    for e in doc["events"]:
        if e["kind"] == "exponential":
            events.append(exponential(e["name"], dist._num(e["rate"])))
        elif e["kind"] == "deterministic":
            events.append(deterministic(e["name"], dist._num(e["delay"])))
        else:
            events.append(general(e["name"], dist.from_dict(e["density"])))
    succ = {(r["state"], r["event"]): {t: dist._num(p) for t, p in r["to"].items()} for r in doc["succ"]}
    return Gsmp(tuple(doc["states"]), tuple(events), {s: set(a) for s, a in doc["active"].items()}, succ,
                {s: dist._num(p) for s, p in doc["init"].items()}, doc.get("tie_order"),
                doc.get("annotations", {}))


# -- chains ---------------------------------------------------------------------


def _form_doc(f):
    if f is None:
        return None
    if hasattr(f, "to_dict"):
        return f.to_dict()
    return {"kind": "zero"}


def _form_from(doc):
    from .iph import _Zero

    if doc is None:
        return None
    if doc.get("kind") == "zero":
        return _Zero()
    return dist.from_dict(doc)


def chain_doc(c, report: dict | None = None) -> dict:
    if isinstance(c, PhChain):
        c = DctmcChain(c, (), (c.closed_form,) if c.closed_form is not None else None)
    out = {
        "type": "chain",
        "rates": c.ph.rates.tolist(),
        "succ": c.ph.succ.tolist(),
        "init": c.ph.init.tolist(),
        "det_events": [{"name": d.name, "delay": d.delay, "active": sorted(d.active), "target": d.target.tolist()}
                       for d in c.det_events],
        "closed_form": _form_doc(c.ph.closed_form),
        "segment_forms": None if c.segment_forms is None else [_form_doc(f) for f in c.segment_forms],
    }
    if report is not None:
        out["report"] = report
    return out


def chain_from_doc(doc) -> DctmcChain:
    validate_document(doc, "chain")
    ph = PhChain(np.array(doc["rates"]), np.array(doc["succ"]), np.array(doc["init"]),
                 closed_form=_form_from(doc.get("closed_form")))
    dets = tuple(DetEvent(d["name"], dist._num(d["delay"]), frozenset(d["active"]), np.array(d["target"]))
                 for d in doc.get("det_events", []))
    forms = doc.get("segment_forms")
    return DctmcChain(ph, dets, None if forms is None else tuple(_form_from(f) for f in forms))


# -- samples and tables -----------------------------------------------------------

PING_TIME = re.compile(r"time[=<]\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*ms")
PLAIN_NUMBER = re.compile(r"^\s*([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*$")


def parse_samples(text: str) -> tuple[list[float], list[str]]:
    """Extract times from a ping log or a newline-separated list.

    Returns the values and diagnostics for lines that were skipped. Lines
    of a ping log without a ``time=`` field (headers, statistics) are
    skipped silently once at least one ping line was seen.
    """
    values, skipped = [], []
    ping_seen = False
    for no, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        m = PING_TIME.search(line)
        if m:
            ping_seen = True
            values.append(float(m.group(1)))
            continue
        m = PLAIN_NUMBER.match(line)
        if m:
            values.append(float(m.group(1)))
            continue
        skipped.append(f"line {no}: no sample found in {line.strip()[:60]!r}")
    if ping_seen:
        skipped = []
    return values, skipped


def csv_text(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
