"""Sequential recommendation with denoising teachers and soft-label distillation.

Experiment functions take a configuration dict with the same keys as the CLI's
JSON config and return plain Python data.
"""

import json
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ._csrec import (
    CsrecError,
    filtered_metrics,
    kl_divergence,
    ndcg_at_n,
    recall_at_n,
    soft_labels,
    student_loss,
)
from . import _csrec

__all__ = [
    "CsrecError",
    "ablate",
    "evaluate",
    "filtered_metrics",
    "generate_log",
    "kl_divergence",
    "ndcg_at_n",
    "normalize_config",
    "prepare",
    "recall_at_n",
    "report_csv",
    "report_table",
    "soft_labels",
    "student_loss",
    "train",
]


def _text(config: Dict[str, Any]) -> str:
    return json.dumps(config)


def normalize_config(config: Dict[str, Any]) -> Dict[str, Any]:
    """Validated configuration with every default filled in."""
    return json.loads(_csrec.normalize_config(_text(config)))


def prepare(config: Dict[str, Any]) -> Dict[str, Any]:
    """Build (or reuse) the prepared dataset; returns its statistics."""
    return json.loads(_csrec.prepare(_text(config)))


def train(config: Dict[str, Any]) -> Dict[str, List[Dict[str, Any]]]:
    """Train teachers and students for every seed; returns the stage runs."""
    return _csrec.train(_text(config))


def evaluate(config: Dict[str, Any]) -> Tuple[str, Dict[str, Any]]:
    """Evaluate trained students; returns the report directory and report."""
    directory, report = _csrec.evaluate(_text(config))
    return directory, json.loads(report)


def ablate(config: Dict[str, Any], sweep: str, values: Optional[Sequence[str]] = None) -> Tuple[str, list]:
    """Run one sweep; returns the summary CSV path and recorded failures."""
    return _csrec.ablate(_text(config), sweep, list(values or []))


def report_table(config: Dict[str, Any]) -> str:
    return _csrec.report_table(_text(config))


def report_csv(report: Dict[str, Any]) -> str:
    """Flat CSV mirror of a report dict."""
    return _csrec.report_csv(json.dumps(report))


def generate_log(spec: Dict[str, Any]) -> str:
    """Tab-separated interaction log of a synthetic world."""
    return _csrec.generate_log(json.dumps(spec))
