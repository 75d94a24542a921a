"""Use-case requirements and the technology feasibility matrix."""

import logging
import math
from dataclasses import dataclass, field

import pandas as pd
import xarray as xr

from . import fileio


KPIS = ("latency", "DL", "UL")
CLASSES = ("pass", "near-miss", "fail")
NEAR_MISS_PP = 1.0
TOLERANCE_PP = 1e-9


@dataclass(frozen=True)
class UseCaseRequirement:
    """Connectivity requirement of one use case.

    Parameters
    ----------
    name : str
    availability : float
        Required availability as a fraction, e.g. 0.99
    max_latency_ms : float
    min_dl_mbps : float
    min_ul_mbps : float
    """

    name: str
    availability: float
    max_latency_ms: float
    min_dl_mbps: float
    min_ul_mbps: float

    def __post_init__(self):
        if not 0 < self.availability < 1:
            raise ValueError(f"{self.name}: availability must be in (0, 1): {self.availability}")
        for attr in ["max_latency_ms", "min_dl_mbps", "min_ul_mbps"]:
            if not getattr(self, attr) > 0:
                raise ValueError(f"{self.name}: {attr} must be positive")

    @property
    def availability_pct(self):
        return 100.0 * self.availability


@dataclass
class FeasibilityVerdict:
    """Measured availability and class per KPI for one (technology, use case)."""

    technology: str
    use_case: str
    required_pct: float
    measured: dict = field(default_factory=dict)
    classes: dict = field(default_factory=dict)


def requirements_from_config(config):
    """Requirement registry from a mapping of use case name to requirement fields.

    Returns
    -------
    requirements : dict
        Name to UseCaseRequirement, in file order
    """

    requirements = {}
    for name, spec in config.items():
        valid_keys = {"availability", "max_latency_ms", "min_dl_mbps", "min_ul_mbps"}
        for key in spec:
            if key not in valid_keys:
                raise KeyError(f"Invalid requirement key: {key}")
        requirements[name] = UseCaseRequirement(name, **spec)

    return requirements


def classify(measured_pct, required_pct, near_miss_pp=NEAR_MISS_PP):
    """Pass, near-miss or fail for one availability.

    Parameters
    ----------
    measured_pct, required_pct : float
        Percentages
    near_miss_pp : float, default 1
        A failing value at most this many percentage points short is a near-miss

    Returns
    -------
    verdict : {'pass', 'near-miss', 'fail'}
    """

    if math.isnan(measured_pct):
        raise ValueError("Measured availability is missing")
    gap = required_pct - measured_pct
    if gap <= TOLERANCE_PP:
        return "pass"
    if gap <= near_miss_pp + TOLERANCE_PP:
        return "near-miss"
    return "fail"


def _availability_array(availability):
    if isinstance(availability, xr.DataArray):
        return availability
    df = pd.DataFrame(availability)
    for column in ["technology", "use_case", "kpi", "measured"]:
        if column not in df.columns:
            raise KeyError(f"Availability table is missing column: {column}")
    if df.duplicated(["technology", "use_case", "kpi"]).any():
        raise ValueError("Availability table has duplicate (technology, use_case, kpi) rows")
    technologies = list(dict.fromkeys(df["technology"]))
    da = df.set_index(["technology", "use_case", "kpi"])["measured"].astype(float).to_xarray()

    return da.reindex(technology=technologies)


def feasibility_matrix(availability, requirements, near_miss_pp=NEAR_MISS_PP, counted=None):
    """Classify every (technology, use case, KPI) cell.

    Parameters
    ----------
    availability : pandas.DataFrame or xarray.DataArray
        Long table with columns technology, use_case, kpi ('latency', 'DL',
        'UL') and measured (percent), or a DataArray over those dimensions
    requirements : dict
        Use case name to UseCaseRequirement
    near_miss_pp : float, default 1
    counted : list, optional
        Use cases included in the technology-ready counts
        (default: names starting with 'UC')

    Returns
    -------
    matrix : xarray.Dataset
        Variables measured, required and verdict over (technology, use_case,
        kpi), and ready_count over (technology, kpi)

    Raises
    ------
    ValueError
        If any cell is missing; the message lists every gap
    """

    da = _availability_array(availability)
    use_cases = list(requirements)
    missing = []
    for technology in da["technology"].values:
        for use_case in use_cases:
            for kpi in KPIS:
                try:
                    value = float(da.sel(technology=technology, use_case=use_case, kpi=kpi))
                except KeyError:
                    value = math.nan
                if math.isnan(value):
                    missing.append(f"{technology}/{use_case}/{kpi}")
    if missing:
        raise ValueError(f"Availability table is missing {len(missing)} cells: {', '.join(missing)}")

    measured = da.sel(use_case=use_cases, kpi=list(KPIS))
    required = xr.DataArray(
        [requirements[name].availability_pct for name in use_cases],
        coords={"use_case": use_cases},
        dims=["use_case"],
    )
    verdict = xr.apply_ufunc(
        lambda m, r: classify(m, r, near_miss_pp),
        measured,
        required,
        vectorize=True,
        output_dtypes=[object],
    ).transpose("technology", "use_case", "kpi")

    matrix = xr.Dataset({"measured": measured, "required": required, "verdict": verdict})
    matrix.attrs["near_miss_pp"] = near_miss_pp
    matrix["ready_count"] = technology_ready_counts(matrix, counted)

    return matrix


def technology_ready_counts(matrix, counted=None):
    """Number of counted use cases passing, per technology and KPI."""

    if counted is None:
        counted = [name for name in matrix["use_case"].values if str(name).startswith("UC")]
    passes = matrix["verdict"].sel(use_case=counted) == "pass"

    return passes.sum("use_case").astype(int)


def verdicts(matrix):
    """FeasibilityVerdict per (technology, use case)."""

    result = []
    for technology in matrix["technology"].values:
        for use_case in matrix["use_case"].values:
            cell = matrix.sel(technology=technology, use_case=use_case)
            result.append(
                FeasibilityVerdict(
                    str(technology),
                    str(use_case),
                    float(cell["required"]),
                    {kpi: float(cell["measured"].sel(kpi=kpi)) for kpi in KPIS},
                    {kpi: str(cell["verdict"].sel(kpi=kpi).item()) for kpi in KPIS},
                )
            )

    return result


def matrix_to_frame(matrix):
    """Long table: technology, use_case, kpi, required, measured, class."""

    rows = []
    for verdict in verdicts(matrix):
        for kpi in KPIS:
            rows.append(
                {
                    "technology": verdict.technology,
                    "use_case": verdict.use_case,
                    "kpi": kpi,
                    "required": verdict.required_pct,
                    "measured": verdict.measured[kpi],
                    "class": verdict.classes[kpi],
                }
            )

    return pd.DataFrame(rows)


def matrix_to_dict(matrix):
    counts = matrix["ready_count"]
    return {
        "near_miss_pp": matrix.attrs["near_miss_pp"],
        "classes": matrix_to_frame(matrix).to_dict(orient="records"),
        "ready_counts": {
            str(technology): {kpi: int(counts.sel(technology=technology, kpi=kpi)) for kpi in KPIS}
            for technology in counts["technology"].values
        },
    }


def load_requirements(source="builtin", base_dir=None):
    """Read a requirement registry.

    Parameters
    ----------
    source : str or dict, default 'builtin'
        'builtin' for the shipped use case table, a YAML file, or a mapping
    base_dir : str, optional
        Directory relative file names are resolved against

    Returns
    -------
    requirements : dict
        Name to UseCaseRequirement
    """

    if isinstance(source, dict):
        return requirements_from_config(source)
    if source == "builtin":
        source = fileio.BUILTIN_PREFIX + "requirements.yml"
    config = fileio.read_config(fileio.resolve_path(source, base_dir))

    return requirements_from_config(config)


def load_availability_table(source="builtin", base_dir=None):
    """Read a long availability table (technology, use_case, kpi, measured)."""

    if source == "builtin":
        source = fileio.BUILTIN_PREFIX + "availability.csv"
    df = pd.read_csv(fileio.resolve_path(source, base_dir), comment="#")
    logging.info(f"Read {len(df)} availability rows from {source}")

    return df
