"""Point and interval scores of predictions against a known truth."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgument

SCORE_COLUMNS = ("rmse", "rmspe", "mae", "mape", "width95", "coverage95")


@dataclass(frozen=True)
class ScoreReport:
    rmse: float
    rmspe: float
    mae: float
    mape: float
    width95: float
    coverage95: float

    def as_row(self, **leading):
        """Dict in table column order, optionally prefixed by label columns."""
        row = dict(leading)
        row.update(asdict(self))
        return row

    def to_csv(self, **leading) -> str:
        row = self.as_row(**leading)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(row.keys())
        writer.writerow([_fmt(v) for v in row.values()])
        return buf.getvalue()

    def to_json(self, **leading) -> str:
        row = {k: (None if isinstance(v, float) and math.isnan(v) else v)
               for k, v in self.as_row(**leading).items()}
        return json.dumps(row, sort_keys=False)


def _fmt(v):
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return str(v)


def score(truth, mean, lo, hi, percentage: str = "error") -> ScoreReport:
    """Average error and 95% interval scores over paired locations.

    Parameters
    ----------
    truth, mean, lo, hi : array_like
        Equal-length vectors of true values, point predictions and interval
        bounds.
    percentage : {"error", "omit"}
        What to do when ``truth`` has zeros: raise, or report the two
        percentage metrics as NaN.
    """
    tau, m, lo, hi = (np.asarray(a, dtype=float).ravel() for a in (truth, mean, lo, hi))
    n = len(tau)
    if n == 0:
        raise InvalidArgument("score needs at least one location")
    if not (len(m) == len(lo) == len(hi) == n):
        raise InvalidArgument("truth, mean and interval vectors must have equal length")
    if percentage not in ("error", "omit"):
        raise InvalidArgument(f"percentage must be 'error' or 'omit', got {percentage!r}")
    err = m - tau
    if np.any(tau == 0):
        if percentage == "error":
            raise InvalidArgument("percentage metrics undefined where truth is zero")
        rmspe = mape = float("nan")
    else:
        rel = err / tau
        rmspe = float(np.sqrt(np.mean(rel ** 2)))
        mape = float(np.mean(np.abs(rel)))
    return ScoreReport(
        rmse=float(np.sqrt(np.mean(err ** 2))),
        rmspe=rmspe,
        mae=float(np.mean(np.abs(err))),
        mape=mape,
        width95=float(np.mean(hi - lo)),
        coverage95=float(np.mean((lo <= tau) & (tau <= hi))),
    )


def mask_uncertain(sd, threshold: float = 3.0) -> np.ndarray:
    """True where the (log-scale) predictive SD strictly exceeds ``threshold``."""
    sd = np.asarray(sd, dtype=float)
    return sd > threshold
