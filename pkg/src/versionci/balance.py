import math
from typing import List, Optional, Union

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict

from .cohort import Cohort, FullMatch
from .rand_test import set_weights


class BalanceRow(BaseModel):
    """Standardized difference of one covariate before and after matching"""

    model_config = ConfigDict(frozen=True)

    covariate: str
    std_diff_before: Optional[float]
    std_diff_after: Optional[float]
    undefined: bool = False


def _as_full_match(match: Union[Cohort, FullMatch]) -> FullMatch:
    return match if isinstance(match, FullMatch) else FullMatch.from_cohort(match)


def balance_table(before: Cohort, after: Union[Cohort, FullMatch]) -> List[BalanceRow]:
    """Standardized differences (mean_T - mean_C) / s with s = sqrt((s_T^2 + s_C^2) / 2)
    from the unmatched cohort; after matching, within-set differences are combined
    with the set weights of the randomization test.
    """
    match = _as_full_match(after)
    if tuple(before.covariate_names) != tuple(match.covariate_names):
        raise ValueError(
            f"covariate names differ: {before.covariate_names} vs {match.covariate_names}"
        )

    xt = before.covariate_matrix(treated=True)
    xc = before.covariate_matrix(treated=False)
    weights = set_weights(match)
    treated = match.treated.astype(float)
    control = 1.0 - treated

    rows = []
    for k, name in enumerate(before.covariate_names):
        var_t = float(np.var(xt[:, k], ddof=1)) if xt.shape[0] > 1 else 0.0
        var_c = float(np.var(xc[:, k], ddof=1)) if xc.shape[0] > 1 else 0.0
        s = math.sqrt((var_t + var_c) / 2.0)
        if s == 0.0:
            logger.warning(f"Covariate {name} has zero pooled variance; standardized difference undefined")
            rows.append(BalanceRow(covariate=name, std_diff_before=None, std_diff_after=None, undefined=True))
            continue

        x = match.covariates[:, k]
        set_diff = (match.set_sums(x * treated) / match.m
                    - match.set_sums(x * control) / (match.n - match.m))
        rows.append(BalanceRow(
            covariate=name,
            std_diff_before=float((xt[:, k].mean() - xc[:, k].mean()) / s),
            std_diff_after=float(np.dot(weights, set_diff) / s),
        ))
    return rows


def balance_frame(rows: List[BalanceRow]) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in rows],
                        columns=['covariate', 'std_diff_before', 'std_diff_after', 'undefined'])


def set_structure_table(match: Union[Cohort, FullMatch]) -> pd.DataFrame:
    """Frequency of set structures '(treated)-(controls)' with totals I, N, M, one row"""
    full = _as_full_match(match)
    counts: dict = {}
    for m, n in zip(full.m.tolist(), full.n.tolist()):
        counts[(m, n - m)] = counts.get((m, n - m), 0) + 1

    # many-treated sets first (3-1, 2-1), then 1-1, 1-2, ...
    ordered = sorted(counts, key=lambda key: (-key[0], key[1]))
    row = {f"{m}-{k}": counts[(m, k)] for m, k in ordered}
    row.update({'I': full.I, 'N': full.N, 'M': full.M})
    return pd.DataFrame([row])
