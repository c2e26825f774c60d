import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from .cohort import Cohort, Unit, Version, VersionArm, sets_from_labels
from .error_handler import CohortValidationError, InputFileError, error_handler
from .validation import validation_manager

JSON_SCHEMA_VERSION = "1"

PathLike = Union[str, Path]


class ColumnSpec(BaseModel):
    """Column names of a cohort CSV and how version labels map to A/B"""

    model_config = ConfigDict(frozen=True)

    id: str = "id"
    treated: str = "treated"
    version: Optional[str] = "version"
    outcome: str = "outcome"
    covariates: Optional[Tuple[str, ...]] = None  # None: every column not named above
    set_id: Optional[str] = "set_id"
    version_a: str = "A"
    version_b: str = "B"
    version_arm: VersionArm = VersionArm.CONTROL

    @model_validator(mode='after')
    def _distinct_labels(self) -> "ColumnSpec":
        if self.version_a == self.version_b:
            raise ValueError("version_a and version_b labels must differ")
        return self

    def reserved_columns(self) -> List[str]:
        return [c for c in (self.id, self.treated, self.version, self.outcome, self.set_id) if c]

    def covariate_columns(self, df: pd.DataFrame) -> List[str]:
        if self.covariates is not None:
            return list(self.covariates)
        reserved = set(self.reserved_columns())
        return [c for c in df.columns if c not in reserved]


def load_csv(path: PathLike, schema: Optional[ColumnSpec] = None) -> Cohort:
    """Load and validate a cohort CSV; a set_id column, if present, induces matched sets"""
    schema = schema or ColumnSpec()
    error_handler.require_input_file(str(path), allowed_extensions=['csv', 'txt'])

    dtypes: Dict[str, Any] = {schema.id: str}
    if schema.version:
        dtypes[schema.version] = str
    try:
        df = pd.read_csv(path, dtype=dtypes, encoding='utf-8', skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise InputFileError(f"Could not parse CSV {path}: {e}", {'path': str(path)}) from e

    cohort = cohort_from_frame(df, schema)
    logger.info(f"Loaded cohort from {path}: {len(cohort.units)} units, I={cohort.I}, N={cohort.N}, M={cohort.M}")
    return cohort


def cohort_from_frame(df: pd.DataFrame, schema: ColumnSpec) -> Cohort:
    """Validate a raw table and build the Cohort (row order preserved)"""
    result = validation_manager.validate_cohort_frame(df, schema)
    if not result['is_valid']:
        raise CohortValidationError("; ".join(result['errors']),
                                    {'errors': result['errors'], 'warnings': result['warnings']})

    covariate_columns = schema.covariate_columns(df)
    has_versions = bool(schema.version and schema.version in df.columns)
    label_map = {schema.version_a: Version.A, schema.version_b: Version.B}

    treated = pd.to_numeric(df[schema.treated]).astype(int).to_numpy() == 1
    outcome = pd.to_numeric(df[schema.outcome]).to_numpy(dtype=float)
    covariates = (df[covariate_columns].apply(pd.to_numeric).to_numpy(dtype=float)
                  if covariate_columns else np.zeros((len(df), 0)))
    versions: List[Optional[Version]] = [None] * len(df)
    if has_versions:
        for row, raw in enumerate(df[schema.version].tolist()):
            if isinstance(raw, str) and raw.strip():
                versions[row] = label_map[raw.strip()]

    units = tuple(
        Unit(
            id=str(unit_id),
            treated=bool(treated[row]),
            version=versions[row],
            outcome=float(outcome[row]),
            covariates=tuple(float(v) for v in covariates[row]),
        )
        for row, unit_id in enumerate(df[schema.id].astype(str).tolist())
    )

    sets = None
    if schema.set_id and schema.set_id in df.columns:
        raw_labels = pd.to_numeric(df[schema.set_id], errors='coerce')
        labels = [None if pd.isna(v) else int(v) for v in raw_labels.tolist()]
        sets = sets_from_labels(units, labels)

    return Cohort(
        units=units,
        sets=sets,
        covariate_names=tuple(covariate_columns),
        version_arm=schema.version_arm,
        has_versions=has_versions,
    )


def cohort_to_frame(cohort: Cohort, schema: Optional[ColumnSpec] = None) -> pd.DataFrame:
    """Tabular form of a cohort with the set id column appended (blank when unmatched)"""
    schema = schema or ColumnSpec()
    reverse = {Version.A: schema.version_a, Version.B: schema.version_b}
    lookup = cohort.set_lookup()
    rows = []
    for unit in cohort.units:
        row: Dict[str, Any] = {schema.id: unit.id, schema.treated: int(unit.treated)}
        if schema.version and cohort.has_versions:
            row[schema.version] = reverse[unit.version] if unit.version is not None else None
        row[schema.outcome] = unit.outcome
        row.update(dict(zip(cohort.covariate_names, unit.covariates)))
        rows.append(row)

    columns = [schema.id, schema.treated]
    if schema.version and cohort.has_versions:
        columns.append(schema.version)
    columns += [schema.outcome, *cohort.covariate_names]
    df = pd.DataFrame(rows, columns=columns)
    if cohort.sets is not None:
        df[schema.set_id or 'set_id'] = pd.array([lookup.get(u.id) for u in cohort.units], dtype='Int64')
    return df


def write_csv(cohort: Cohort, path: PathLike, schema: Optional[ColumnSpec] = None) -> None:
    df = cohort_to_frame(cohort, schema)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, encoding='utf-8', lineterminator='\n')
    logger.info(f"Wrote {len(df)} units to {path}")


def to_json(cohort: Cohort) -> str:
    """Persist a cohort as JSON with stable field names"""
    lookup = cohort.set_lookup()
    payload = {
        'schema': JSON_SCHEMA_VERSION,
        'version_arm': cohort.version_arm.value,
        'has_versions': cohort.has_versions,
        'has_sets': cohort.sets is not None,
        'covariate_names': list(cohort.covariate_names),
        'units': [
            {
                'id': unit.id,
                'treated': unit.treated,
                'version': unit.version.value if unit.version is not None else None,
                'outcome': unit.outcome,
                'covariates': list(unit.covariates),
                'set_id': lookup.get(unit.id),
            }
            for unit in cohort.units
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def from_json(text: str) -> Cohort:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise InputFileError(f"Invalid cohort JSON: {e}") from e

    ok, message = error_handler.validate_data_structure(
        payload, ['schema', 'version_arm', 'covariate_names', 'units'], 'cohort JSON')
    if not ok:
        raise CohortValidationError(message)
    if payload['schema'] != JSON_SCHEMA_VERSION:
        raise CohortValidationError(f"Unsupported cohort JSON schema {payload['schema']!r}")

    try:
        return _cohort_from_payload(payload)
    except (ValidationError, ValueError, TypeError) as e:
        raise CohortValidationError(f"Invalid cohort JSON record: {e}") from e


def _cohort_from_payload(payload: Dict[str, Any]) -> Cohort:
    units = []
    labels: List[Optional[int]] = []
    for record in payload['units']:
        ok, message = error_handler.validate_data_structure(
            record, ['id', 'treated', 'version', 'outcome', 'covariates', 'set_id'], 'unit record')
        if not ok:
            raise CohortValidationError(message)
        units.append(Unit(
            id=record['id'],
            treated=record['treated'],
            version=Version(record['version']) if record['version'] is not None else None,
            outcome=record['outcome'],
            covariates=tuple(record['covariates']),
        ))
        labels.append(record['set_id'])

    has_sets = payload.get('has_sets', any(label is not None for label in labels))
    return Cohort(
        units=tuple(units),
        sets=sets_from_labels(units, labels) if has_sets else None,
        covariate_names=tuple(payload['covariate_names']),
        version_arm=VersionArm(payload['version_arm']),
        has_versions=payload.get('has_versions', any(u.version is not None for u in units)),
    )


def subset_by_version(cohort: Cohort, version: Version) -> Cohort:
    """Non-version arm plus version-``version`` units of the version arm; matched sets are dropped"""
    if not cohort.has_versions:
        raise CohortValidationError("version column absent: cohort carries no version labels")

    version_on_treated = cohort.version_arm == VersionArm.TREATED
    units = tuple(
        unit for unit in cohort.units
        if unit.treated != version_on_treated or unit.version == version
    )
    dropped = len(cohort.units) - len(units)
    logger.info(f"Subset to version {version.value}: kept {len(units)} units, dropped {dropped}")
    if not any(unit.treated == version_on_treated for unit in units):
        logger.warning(f"Version {version.value} subset has no units on the {cohort.version_arm.value} arm")
    return Cohort(
        units=units,
        sets=None,
        covariate_names=cohort.covariate_names,
        version_arm=cohort.version_arm,
        has_versions=True,
    )
