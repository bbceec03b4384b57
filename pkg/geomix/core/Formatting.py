import logging
from typing import Callable, Dict, List

import numpy as np
import pandas as pd

from geomix.core.ModelKind import ModelKind
from geomix.core.Scoring import ScoreReport

logger = logging.getLogger(__name__)


def decimal_format(number: float, num_decimal_places: int) -> str:
    """
    Formats a float using a fixed number of decimal places.

    Args:
        number: number to make a string for
        num_decimal_places: digits after the decimal point

    Returns:
        string form of number, "NA" if it is not finite
    """
    if not np.isfinite(number):
        return "NA"
    return f"{{:.{num_decimal_places}f}}".format(number)


def score_table(reports: Dict[ModelKind, List[ScoreReport]]) -> pd.DataFrame:
    """
    Tabulates score reports, one row per model and fold.

    Args:
        reports: per-model lists of fold reports

    Returns:
        DataFrame with columns model, fold, log_density, r2_tilde, coverage_95
    """
    rows = [
        {
            "model": model.label,
            "fold": report.scheme,
            "log_density": report.total_log_cpo,
            "r2_tilde": report.r2_tilde,
            "coverage_95": report.coverage_95,
        }
        for (model, model_reports) in reports.items()
        for report in model_reports
    ]
    return pd.DataFrame(
        rows, columns=["model", "fold", "log_density", "r2_tilde", "coverage_95"]
    )


def print_pandas_dataframe(
    frame: pd.DataFrame,
    num_decimal_places: int,
    print_func: Callable[..., None] = print,
) -> None:
    """
    Prints DataFrame with the configured number of decimal places.

    Args:
        frame: the DataFrame to print
        num_decimal_places: digits shown after the decimal point
        print_func: function to use to print
    """
    with pd.option_context(
        "display.float_format",
        lambda number: decimal_format(number, num_decimal_places),
        "display.max_rows",
        None,
        "display.max_columns",
        None,
        "display.width",
        None,
    ):
        print_func(frame)
    return
