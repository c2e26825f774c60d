from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from loguru import logger

from .cohort import VersionArm, violation_message
from .debug_logger import debug_logger


class ValidationManager:
    """Validation of cohort tables before they become ``Cohort`` objects"""

    def __init__(self) -> None:
        self.binary_values = {0, 1}
        self.imbalance_warning_share = 0.05

    def validate_cohort_frame(self, df: pd.DataFrame, schema: Any) -> Dict[str, Any]:
        """Check a raw cohort table against its ColumnSpec.

        Returns a dict with ``is_valid``, ``errors``, ``warnings`` and ``summary``.
        """
        validation_result: Dict[str, Any] = {
            'is_valid': True,
            'errors': [],
            'warnings': [],
            'summary': {},
        }

        missing = self._check_required_columns(df, schema)
        if missing:
            validation_result['errors'].extend([f"missing column: {column}" for column in missing])
            validation_result['is_valid'] = False
            validation_result['summary'] = self._generate_validation_summary(validation_result, df)
            debug_logger.log_data_validation('cohort', False, validation_result['errors'])
            return validation_result

        for check in (self._validate_ids, self._validate_treated, self._validate_outcome,
                      self._validate_covariates, self._validate_versions, self._validate_sets):
            result = check(df, schema)
            validation_result['errors'].extend(result['errors'])
            validation_result['warnings'].extend(result['warnings'])

        validation_result['is_valid'] = not validation_result['errors']
        validation_result['summary'] = self._generate_validation_summary(validation_result, df)
        debug_logger.log_data_validation('cohort', validation_result['is_valid'], validation_result['errors'])
        return validation_result

    def _check_required_columns(self, df: pd.DataFrame, schema: Any) -> List[str]:
        required = [schema.id, schema.treated, schema.outcome, *schema.covariate_columns(df)]
        return [column for column in required if column not in df.columns]

    def _validate_ids(self, df: pd.DataFrame, schema: Any) -> Dict[str, List[str]]:
        result: Dict[str, List[str]] = {'errors': [], 'warnings': []}
        ids = df[schema.id].astype(str)
        duplicated = ids[ids.duplicated()].unique().tolist()
        for unit_id in duplicated:
            result['errors'].append(f"duplicate id: {unit_id}")
        if df[schema.id].isna().any():
            result['errors'].append("id column has missing values")
        return result

    def _validate_treated(self, df: pd.DataFrame, schema: Any) -> Dict[str, List[str]]:
        result: Dict[str, List[str]] = {'errors': [], 'warnings': []}
        treated = pd.to_numeric(df[schema.treated], errors='coerce')
        bad = df[schema.id][~treated.isin(self.binary_values)].astype(str).tolist()
        if bad:
            result['errors'].append(
                f"non-binary treated value for id(s): {', '.join(bad[:5])}{' ...' if len(bad) > 5 else ''}"
            )
            return result

        share = float(treated.mean()) if len(treated) else 0.0
        if len(treated) and (share < self.imbalance_warning_share or share > 1 - self.imbalance_warning_share):
            result['warnings'].append(f"treated share {share:.3f} is very unbalanced")
        return result

    def _validate_outcome(self, df: pd.DataFrame, schema: Any) -> Dict[str, List[str]]:
        result: Dict[str, List[str]] = {'errors': [], 'warnings': []}
        outcome = pd.to_numeric(df[schema.outcome], errors='coerce')
        bad = df[schema.id][~np.isfinite(outcome.to_numpy(dtype=float))].astype(str).tolist()
        if bad:
            result['errors'].append(
                f"missing or non-finite outcome for id(s): {', '.join(bad[:5])}{' ...' if len(bad) > 5 else ''}"
            )
        return result

    def _validate_covariates(self, df: pd.DataFrame, schema: Any) -> Dict[str, List[str]]:
        result: Dict[str, List[str]] = {'errors': [], 'warnings': []}
        for column in schema.covariate_columns(df):
            values = pd.to_numeric(df[column], errors='coerce')
            if not np.all(np.isfinite(values.to_numpy(dtype=float))):
                result['errors'].append(f"covariate {column} has missing or non-numeric values")
            elif values.nunique() <= 1:
                result['warnings'].append(f"covariate {column} is constant")
        return result

    def _validate_versions(self, df: pd.DataFrame, schema: Any) -> Dict[str, List[str]]:
        result: Dict[str, List[str]] = {'errors': [], 'warnings': []}
        if not schema.version or schema.version not in df.columns:
            return result

        treated = pd.to_numeric(df[schema.treated], errors='coerce') == 1
        on_version_arm = treated if schema.version_arm == VersionArm.TREATED else ~treated
        labels = df[schema.version]
        present = labels.notna() & (labels.astype(str).str.strip() != '')
        allowed = {schema.version_a, schema.version_b}

        unknown = df[schema.id][on_version_arm & present & ~labels.astype(str).str.strip().isin(allowed)]
        if len(unknown):
            result['errors'].append(
                f"version label not in {sorted(allowed)} for id(s): {', '.join(unknown.astype(str).tolist()[:5])}"
            )
        unlabeled = df[schema.id][on_version_arm & ~present]
        if len(unlabeled):
            result['errors'].append(
                f"missing version label on the {schema.version_arm.value} arm for id(s): "
                f"{', '.join(unlabeled.astype(str).tolist()[:5])}"
            )
        both_arms = df[schema.id][~on_version_arm & present]
        if len(both_arms):
            result['errors'].append(
                f"version label on the non-version arm for id(s): {', '.join(both_arms.astype(str).tolist()[:5])}"
            )
        return result

    def _validate_sets(self, df: pd.DataFrame, schema: Any) -> Dict[str, List[str]]:
        result: Dict[str, List[str]] = {'errors': [], 'warnings': []}
        if not schema.set_id or schema.set_id not in df.columns:
            return result

        raw = df[schema.set_id]
        labels = pd.to_numeric(raw, errors='coerce')
        non_integer = raw.notna() & (labels.isna() | (labels % 1 != 0))
        if non_integer.any():
            result['errors'].append(f"non-integer {schema.set_id} value(s): "
                                    f"{', '.join(raw[non_integer].astype(str).tolist()[:5])}")
            return result

        treated = pd.to_numeric(df[schema.treated], errors='coerce')
        matched = labels.notna()
        grouped = treated[matched].groupby(labels[matched].astype(int))
        for set_id, members in grouped:
            message = violation_message(set_id, int(members.sum()), int(members.count()))
            if message:
                result['errors'].append(message)
        unmatched = int((~matched).sum())
        if unmatched:
            result['warnings'].append(f"{unmatched} unit(s) are not in any matched set")
        return result

    def _generate_validation_summary(self, validation_result: Dict[str, Any],
                                     df: Optional[pd.DataFrame] = None) -> Dict[str, Any]:
        summary = {
            'total_errors': len(validation_result['errors']),
            'total_warnings': len(validation_result['warnings']),
            'rows': int(len(df)) if df is not None else 0,
        }
        if validation_result['warnings']:
            logger.info(f"Cohort validation warnings: {validation_result['warnings']}")
        return summary


validation_manager = ValidationManager()
