import io
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import pandas as pd
import typer
from loguru import logger

from .balance import BalanceRow, balance_frame
from .interval_engine import Interval, IntervalSet
from .matching import MatchResult
from .rand_test import TestResult
from .sim_lab import SimReport, report_row
from .utils import format_interval, json_safe

SCHEMA_VERSION = "1"

PLOT_COLUMNS = ['label', 'lo', 'hi', 'gamma']


class ReportGenerator:
    """Machine-readable artifacts: JSON results and CSV tables with stable bytes"""

    def dumps(self, kind: str, payload: Dict[str, Any]) -> str:
        """JSON document with the schema version, sorted keys and a trailing newline"""
        document = {'schema': SCHEMA_VERSION, 'kind': kind, **payload}
        return json.dumps(json_safe(document), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def frame_to_csv(self, df: pd.DataFrame) -> str:
        buffer = io.StringIO()
        df.to_csv(buffer, index=False, lineterminator='\n')
        return buffer.getvalue()

    def interval_payload(self, interval: Interval) -> Dict[str, Any]:
        return {
            'label': interval.label.value,
            'lo': interval.lo,
            'hi': interval.hi,
            'alpha': interval.alpha,
            'display': format_interval(interval.lo, interval.hi),
        }

    def interval_set_payload(self, interval_set: IntervalSet) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            'gamma': interval_set.gamma,
            'statistic': interval_set.statistic.value,
            'intervals': [self.interval_payload(i) for i in interval_set.intervals()],
        }
        return payload

    def ci_report(self, interval_set: IntervalSet) -> str:
        payload = self.interval_set_payload(interval_set)
        if interval_set.bonferroni is not None:
            payload['bonferroni_length_ratio'] = interval_set.bonferroni_length_ratio
        return self.dumps('ci', payload)

    def sensitivity_report(self, interval_sets: Iterable[IntervalSet],
                           masking: Optional[Dict[str, Any]] = None) -> str:
        payload: Dict[str, Any] = {'results': [self.interval_set_payload(s) for s in interval_sets]}
        if masking is not None:
            payload['masking'] = masking
        return self.dumps('sensitivity', payload)

    def test_report(self, result: TestResult, alpha: float) -> str:
        payload = result.model_dump(mode='json')
        payload['alpha'] = alpha
        payload['reject'] = result.p_two_sided <= alpha
        return self.dumps('test', {'result': payload})

    def match_report(self, result: MatchResult, structure: pd.DataFrame) -> str:
        return self.dumps('match', {
            'total_cost': result.total_cost,
            'sets': [
                {'set_id': s.set_id, 'members': list(s.member_ids), 'm': s.m, 'n': s.n}
                for s in result.sets
            ],
            'structure': {k: int(v) for k, v in structure.iloc[0].to_dict().items()},
        })

    def balance_report(self, rows: List[BalanceRow], structure: pd.DataFrame) -> str:
        table = balance_frame(rows)
        return self.dumps('balance', {
            'covariates': [row.model_dump() for row in rows],
            'max_abs_std_diff_after': float(table['std_diff_after'].abs().max())
            if table['std_diff_after'].notna().any() else None,
            'structure': {k: int(v) for k, v in structure.iloc[0].to_dict().items()},
        })

    def plot_rows(self, interval_sets: Iterable[IntervalSet]) -> str:
        """label, lo, hi, gamma rows, one block per gamma"""
        rows = [row for s in interval_sets for row in s.to_rows()]
        return self.frame_to_csv(pd.DataFrame(rows, columns=PLOT_COLUMNS))

    def simulation_csv(self, reports: Iterable[SimReport]) -> str:
        return self.frame_to_csv(pd.DataFrame([report_row(r) for r in reports]))

    def emit(self, text: str, output: Optional[Path] = None) -> None:
        """Write an artifact to ``output`` or to stdout"""
        if output is None:
            typer.echo(text, nl=False)
            return
        output.parent.mkdir(parents=True, exist_ok=True)
        with open(output, 'w', encoding='utf-8', newline='\n') as handle:
            handle.write(text)
        logger.info(f"Wrote {output}")


report_generator = ReportGenerator()
