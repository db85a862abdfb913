"""Run an experiment config and write its result rows as CSV."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FracPMEError, StepError
from .config import ConfigError, ExperimentConfig
from .suites import SUITES


@dataclass
class RunResult:
    config: ExperimentConfig
    rows: list
    path: Path | None

    @property
    def failed(self) -> int:
        return sum(1 for r in self.rows if r.get("passed") is False)

    @property
    def checked(self) -> int:
        return sum(1 for r in self.rows if r.get("passed") is not None)

    @property
    def passed(self) -> bool:
        return self.failed == 0

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"{self.config.id} [{self.config.kind}]: {len(self.rows)} rows, "
            f"{self.checked} checked, {self.failed} failed -> {verdict}"
        )


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(v)


def to_csv(experiment: str, rows: list[dict]) -> str:
    """CSV text with a header naming the union of columns in first-seen order."""
    cols = ["experiment"]
    for r in rows:
        for k in r:
            if k != "passed" and k not in cols:
                cols.append(k)
    cols.append("passed")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([experiment if c == "experiment" else _fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def run(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    """Execute ``cfg`` and, when ``out_dir`` is given, write ``<out_dir>/<id>.csv``."""
    fn, _ = SUITES[cfg.kind]
    try:
        rows = fn(cfg)
    except ConfigError:
        raise
    except StepError as exc:
        raise StepError(
            f"experiment {cfg.id}: {exc}", t=exc.t, residuals=exc.residuals, offending=exc.offending
        ) from exc
    except FracPMEError as exc:
        raise type(exc)(f"experiment {cfg.id}: {exc}") from exc
    path = None
    if out_dir is not None or cfg.output:
        target = Path(out_dir) if out_dir is not None else Path(cfg.output).parent
        name = f"{cfg.id}.csv" if out_dir is not None or not cfg.output else Path(cfg.output).name
        target.mkdir(parents=True, exist_ok=True)
        path = target / name
        path.write_text(to_csv(cfg.id, rows))
    return RunResult(cfg, rows, path)
