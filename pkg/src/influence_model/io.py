"""Serialization: parameter documents, observation files, report and trace
artifacts.

Parameters travel as one version-tagged JSON document holding the spec and
every matrix as row-major nested lists.  Observation files are CSV (header
row of chain names, one row per time step) or an equivalent JSON layout;
both round-trip exactly.  All writers emit byte-identical output for
identical inputs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .inference import FitReport, Posteriors
from .model import (
    GaussianEmission,
    GaussianFixedMeans,
    ModelParams,
    ModelSpec,
    Multinomial,
    MultinomialEmission,
    ObservationSet,
)

__all__ = [
    "FORMAT_VERSION",
    "IngestError",
    "params_to_document",
    "params_from_document",
    "save_params",
    "load_params",
    "ingest",
    "write_observations",
    "report_to_document",
    "save_report",
    "write_pattern_trace",
    "write_kl_curve",
    "write_accuracy_table",
]

FORMAT_VERSION = 1


class IngestError(ValueError):
    """Malformed observation or parameter input; message carries the
    offending line when known."""


# ---------------------------------------------------------------------------
# Parameter documents
# ---------------------------------------------------------------------------

def _emission_family_doc(fam) -> dict:
    if isinstance(fam, Multinomial):
        return {"kind": "multinomial", "num_symbols": fam.num_symbols}
    return {"kind": "gaussian_fixed_means", "means": list(fam.means),
            "shared_variance": fam.shared_variance}


def _emission_family_from(doc: dict):
    kind = doc.get("kind")
    if kind == "multinomial":
        return Multinomial(doc.get("num_symbols"))
    if kind == "gaussian_fixed_means":
        return GaussianFixedMeans(tuple(doc["means"]), bool(doc["shared_variance"]))
    raise IngestError(f"unknown emission family kind: {kind!r}")


def params_to_document(params: ModelParams, spec: ModelSpec) -> dict:
    em = params.emission
    if isinstance(em, MultinomialEmission):
        emission = {"kind": "multinomial", "table": em.table.tolist()}
    else:
        emission = {"kind": "gaussian", "means": em.means.tolist(),
                    "variances": em.variances.tolist()}
    return {
        "format_version": FORMAT_VERSION,
        "spec": {
            "num_chains": spec.num_chains,
            "num_states": spec.num_states,
            "num_patterns": spec.num_patterns,
            "prior_exponent": spec.prior_exponent,
            "emission_family": _emission_family_doc(spec.emission_family),
        },
        "params": {
            "influence": params.influence.tolist(),
            "self_transition": params.self_transition.tolist(),
            "cross_transition": params.cross_transition.tolist(),
            "pattern_transition": params.pattern_transition.tolist(),
            "emission": emission,
            "initial_state": params.initial_state.tolist(),
            "initial_pattern": params.initial_pattern.tolist(),
        },
    }


def params_from_document(doc: dict) -> tuple[ModelParams, ModelSpec]:
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise IngestError(f"unsupported parameter format version: {version!r}")
    s = doc["spec"]
    spec = ModelSpec(s["num_chains"], s["num_states"], s["num_patterns"],
                     s["prior_exponent"], _emission_family_from(s["emission_family"]))
    p = doc["params"]
    em_doc = p["emission"]
    if em_doc["kind"] == "multinomial":
        emission = MultinomialEmission(np.array(em_doc["table"]))
    elif em_doc["kind"] == "gaussian":
        emission = GaussianEmission(np.array(em_doc["means"]),
                                    np.array(em_doc["variances"]))
    else:
        raise IngestError(f"unknown emission kind: {em_doc['kind']!r}")
    params = ModelParams(
        influence=np.array(p["influence"]),
        self_transition=np.array(p["self_transition"]),
        cross_transition=np.array(p["cross_transition"]),
        pattern_transition=np.array(p["pattern_transition"]),
        emission=emission,
        initial_state=np.array(p["initial_state"]),
        initial_pattern=np.array(p["initial_pattern"]),
    )
    return params, spec


def save_params(path, params: ModelParams, spec: ModelSpec) -> None:
    doc = params_to_document(params, spec)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_params(path) -> tuple[ModelParams, ModelSpec]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise IngestError(f"{path}: invalid JSON at line {exc.lineno}") from exc
    return params_from_document(doc)


# ---------------------------------------------------------------------------
# Observation files
# ---------------------------------------------------------------------------

def _parse_cell(text: str, discrete: bool, line_no: int):
    text = text.strip()
    try:
        if discrete:
            return int(text)
        return float(text)
    except ValueError:
        kind = "symbol" if discrete else "value"
        raise IngestError(f"line {line_no}: invalid {kind} {text!r}") from None


def ingest(path, file_format: str = "csv",
           emission_family: Multinomial | GaussianFixedMeans | None = None
           ) -> ObservationSet:
    """Read an observation file.

    CSV files carry a header row of chain names and one row per time step,
    one column per chain; JSON files hold the same data as
    ``{"chains": [...], "rows": [[...], ...]}``.  Discrete mode (multinomial
    family, the default) requires integer symbols >= 1 and, when the
    alphabet size is fixed, within it; continuous mode accepts real values.
    Ragged rows and malformed cells are reported with their line number.
    """
    discrete = not isinstance(emission_family, GaussianFixedMeans)
    path = Path(path)
    if not path.exists():
        raise IngestError(f"no such file: {path}")

    if file_format == "csv":
        lines = path.read_text().splitlines()
        if not lines:
            raise IngestError(f"{path}: empty file")
        header = [h.strip() for h in lines[0].split(",")]
        width = len(header)
        rows = []
        for i, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            cells = line.split(",")
            if len(cells) != width:
                raise IngestError(
                    f"line {i}: expected {width} values, found {len(cells)}")
            rows.append([_parse_cell(c, discrete, i) for c in cells])
        if not rows:
            raise IngestError(f"{path}: no data rows")
    elif file_format == "json":
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise IngestError(f"{path}: invalid JSON at line {exc.lineno}") from exc
        rows = doc.get("rows")
        width = len(doc.get("chains", rows[0] if rows else []))
        if not rows:
            raise IngestError(f"{path}: no data rows")
        for i, row in enumerate(rows, start=1):
            if len(row) != width:
                raise IngestError(
                    f"row {i}: expected {width} values, found {len(row)}")
            if discrete and any(not float(v).is_integer() for v in row):
                raise IngestError(f"row {i}: discrete mode requires integers")
        rows = [[int(v) if discrete else float(v) for v in row] for row in rows]
    else:
        raise IngestError(f"unknown observation format: {file_format!r}")

    values = np.array(rows, dtype=int if discrete else float).T
    if discrete:
        if values.min() < 1:
            raise IngestError(
                f"symbol {values.min()} out of range: symbols start at 1")
        if (isinstance(emission_family, Multinomial)
                and emission_family.num_symbols is not None
                and values.max() > emission_family.num_symbols):
            raise IngestError(
                f"symbol {values.max()} out of range 1.."
                f"{emission_family.num_symbols}")
    return ObservationSet(values)


def write_observations(path, obs: ObservationSet, file_format: str = "csv",
                       chain_names=None) -> None:
    names = (list(chain_names) if chain_names is not None
             else [f"chain{c + 1}" for c in range(obs.num_chains)])
    fmt = (lambda v: str(int(v))) if obs.is_discrete else repr
    if file_format == "csv":
        lines = [",".join(names)]
        for t in range(obs.length):
            lines.append(",".join(fmt(v) for v in obs.values[:, t]))
        Path(path).write_text("\n".join(lines) + "\n")
    elif file_format == "json":
        rows = [[int(v) if obs.is_discrete else float(v) for v in obs.values[:, t]]
                for t in range(obs.length)]
        doc = {"chains": names, "rows": rows}
        Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")
    else:
        raise IngestError(f"unknown observation format: {file_format!r}")


# ---------------------------------------------------------------------------
# Reports and traces
# ---------------------------------------------------------------------------

def report_to_document(report: FitReport) -> dict:
    return {
        "iterations_run": report.iterations_run,
        "converged": report.converged,
        "loglik_proxy": report.loglik_proxy,
        "max_param_delta": report.max_param_delta,
        "kl_to_reference": report.kl_to_reference,
    }


def save_report(path, report: FitReport) -> None:
    Path(path).write_text(
        json.dumps(report_to_document(report), indent=2, sort_keys=True) + "\n")


def write_pattern_trace(path, posteriors: Posteriors) -> None:
    """Smoothed pattern posterior as CSV rows (t, pattern, probability)."""
    lam = posteriors.pattern_marginals
    lines = ["t,pattern,probability"]
    for t in range(lam.shape[0]):
        for j in range(lam.shape[1]):
            lines.append(f"{t + 1},{j + 1},{lam[t, j]!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_kl_curve(path, kl_values) -> None:
    lines = ["iteration,kl_to_reference"]
    for i, v in enumerate(kl_values, start=1):
        lines.append(f"{i},{v!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_accuracy_table(path, table: dict[str, dict[str, float]]) -> None:
    """Accuracy CSV: one row per method, one column per scenario."""
    scenarios = list(table.keys())
    methods: list[str] = []
    for scenario in scenarios:
        for m in table[scenario]:
            if m not in methods:
                methods.append(m)
    lines = ["method," + ",".join(scenarios)]
    for m in methods:
        cells = [("" if m not in table[s] else repr(table[s][m])) for s in scenarios]
        lines.append(m + "," + ",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
