"""Parsing, validation and filtering of the input tables.

Four CSV inputs feed the pipeline (plus the world trade table used for
product-level scores):

* exports      ``firm_id, hs6, year, value``
* financials   ``firm_id, year, employees, operating_revenue, net_income``
* gdp          ``country, gdp_pc``
* hs_map       ``hs6, hs4, section_index, section_label``
* world_trade  ``country, hs6, value``

Column names in the files may differ; pass a ``schema`` mapping each
canonical field to its header. Row-level problems in the record tables are
collected as :class:`Rejection` entries (stable order by line number);
structural problems raise :class:`~firmcomplexity.exceptions.ValidationError`.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .exceptions import ValidationError

logger = logging.getLogger(__name__)

N_SECTIONS = 21

EXPORT_FIELDS = ("firm_id", "hs6", "year", "value")
FINANCIAL_FIELDS = ("firm_id", "year", "employees", "operating_revenue", "net_income")
GDP_FIELDS = ("country", "gdp_pc")
HS_MAP_FIELDS = ("hs6", "hs4", "section_index", "section_label")
WORLD_TRADE_FIELDS = ("country", "hs6", "value")

_HS6_PATTERN = r"\d{6}"


@dataclass(frozen=True)
class Rejection:
    line: int
    field: str
    reason: str
    raw: str


@dataclass
class LoadReport:
    """Outcome of loading one record table."""

    path: str
    n_rows: int = 0
    n_accepted: int = 0
    n_duplicates_merged: int = 0
    value_accepted: float = 0.0
    value_rejected: float = 0.0
    rejections: list = field(default_factory=list)

    @property
    def n_rejected(self):
        return len(self.rejections)

    def to_dict(self):
        return {
            "path": os.path.basename(self.path),
            "n_rows": self.n_rows,
            "n_accepted": self.n_accepted,
            "n_rejected": self.n_rejected,
            "n_duplicates_merged": self.n_duplicates_merged,
            "rejections": [r.__dict__ for r in self.rejections[:100]],
        }


@dataclass(frozen=True, eq=False)
class ExportPanel:
    """Firm x product x year export values with interned identifiers.

    ``firm`` and ``product`` hold dense integer codes into ``firm_ids`` and
    ``products`` (both sorted). Records are unique per (firm, product, year)
    and stored sorted by that key.
    """

    firm_ids: np.ndarray
    products: np.ndarray
    firm: np.ndarray
    product: np.ndarray
    year: np.ndarray
    value: np.ndarray
    report: LoadReport | None = None

    def __len__(self):
        return int(self.value.shape[0])

    @property
    def years(self):
        return np.unique(self.year)

    def to_frame(self):
        return pd.DataFrame({
            "firm_id": self.firm_ids[self.firm],
            "hs6": self.products[self.product],
            "year": self.year,
            "value": self.value,
        })

    def subset(self, mask):
        """Records where ``mask`` holds, with identifiers re-interned."""
        firm, product = self.firm[mask], self.product[mask]
        firm_codes = np.unique(firm)
        product_codes = np.unique(product)
        return ExportPanel(
            firm_ids=self.firm_ids[firm_codes], products=self.products[product_codes],
            firm=np.searchsorted(firm_codes, firm).astype(np.int32),
            product=np.searchsorted(product_codes, product).astype(np.int32),
            year=self.year[mask], value=self.value[mask], report=self.report)

    def equals(self, other):
        return (np.array_equal(self.firm_ids, other.firm_ids)
                and np.array_equal(self.products, other.products)
                and np.array_equal(self.firm, other.firm)
                and np.array_equal(self.product, other.product)
                and np.array_equal(self.year, other.year)
                and np.array_equal(self.value, other.value))


@dataclass(frozen=True, eq=False)
class FinancialPanel:
    """Yearly financial records; absent values are NaN, never zero."""

    frame: pd.DataFrame
    report: LoadReport | None = None

    def wide(self, column):
        """``firm_id x year`` table of one column (NaN for gaps)."""
        return self.frame.pivot(index="firm_id", columns="year", values=column).sort_index()


@dataclass(frozen=True, eq=False)
class GdpTable:
    gdp_pc: pd.Series

    def log_gdp(self, countries):
        countries = pd.Index(countries)
        missing = countries.difference(self.gdp_pc.index)
        if len(missing):
            raise ValidationError(f"no GDP entry for countries: {list(missing[:10])}")
        return np.log(self.gdp_pc.reindex(countries).to_numpy(dtype=np.float64))


@dataclass(frozen=True, eq=False)
class HsMap:
    """HS6 -> (HS4 prefix, section index 1..21, section label)."""

    frame: pd.DataFrame

    @property
    def hs6(self):
        return self.frame.index.to_numpy()

    def hs4_of(self, hs6):
        return self._lookup(hs6, "hs4")

    def section_of(self, hs6):
        return self._lookup(hs6, "section_index").astype(np.int64)

    def section_labels(self):
        return (self.frame.drop_duplicates("section_index")
                .set_index("section_index")["section_label"].sort_index())

    def _lookup(self, hs6, column):
        hs6 = pd.Index(np.asarray(hs6, dtype=object))
        missing = hs6.difference(self.frame.index)
        if len(missing):
            raise ValidationError(f"HS6 codes missing from the HS map: {list(missing[:10])}")
        return self.frame[column].reindex(hs6).to_numpy()


@dataclass(frozen=True, eq=False)
class WorldTrade:
    """Country x product export values (one aggregate table)."""

    frame: pd.DataFrame
    report: LoadReport | None = None


# ---------------------------------------------------------------------------
# CSV plumbing


def _resolve_schema(fields, schema):
    schema = dict(schema or {})
    unknown = set(schema) - set(fields)
    if unknown:
        raise ValidationError(f"unknown schema fields: {sorted(unknown)}")
    return {f: schema.get(f, f) for f in fields}


def _iter_chunks(path, fields, schema, delimiter, chunksize):
    columns = _resolve_schema(fields, schema)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().rstrip("\r\n").split(delimiter)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ValidationError(f"{path} is not valid UTF-8: {exc}") from exc
    header = [h.strip() for h in header]
    missing = [c for c in columns.values() if c not in header]
    if missing:
        raise ValidationError(f"{path}: header {header} lacks columns {missing}")
    reader = pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False,
                         usecols=list(columns.values()), chunksize=chunksize,
                         encoding="utf-8")
    rename = {v: k for k, v in columns.items()}
    offset = 0
    for chunk in reader:
        chunk = chunk.rename(columns=rename)
        chunk.index = np.arange(offset, offset + len(chunk)) + 2  # header is line 1
        offset += len(chunk)
        yield chunk


def _reject(rejections, chunk, mask, field_name, reason):
    if mask.any():
        bad = chunk.loc[mask, field_name]
        rejections.extend(Rejection(int(line), field_name, reason, str(raw))
                          for line, raw in bad.items())
    return mask


def _parse_year(chunk, rejections, years, bad):
    year = pd.to_numeric(chunk["year"].str.strip(), errors="coerce")
    m = ~bad & (year.isna() | (year != np.floor(year)))
    bad |= _reject(rejections, chunk, m, "year", "year is not an integer")
    if years is not None:
        lo, hi = years
        m = ~bad & ((year < lo) | (year > hi))
        bad |= _reject(rejections, chunk, m, "year", f"year outside [{lo}, {hi}]")
    return year


def _build_panel(firm_id, hs6, year, value, report=None):
    firm, firm_ids = pd.factorize(np.asarray(firm_id, dtype=object), sort=True)
    product, products = pd.factorize(np.asarray(hs6, dtype=object), sort=True)
    firm_ids = np.asarray(firm_ids, dtype=object)
    products = np.asarray(products, dtype=object)
    year = np.asarray(year, dtype=np.int64)
    value = np.asarray(value, dtype=np.float64)
    order = np.lexsort((year, product, firm))
    firm, product, year, value = firm[order], product[order], year[order], value[order]
    if len(value):
        key_change = np.ones(len(value), dtype=bool)
        key_change[1:] = ((firm[1:] != firm[:-1]) | (product[1:] != product[:-1])
                          | (year[1:] != year[:-1]))
        starts = np.flatnonzero(key_change)
        if len(starts) < len(value):
            if report is not None:
                report.n_duplicates_merged += len(value) - len(starts)
            value = np.add.reduceat(value, starts)
            firm, product, year = firm[starts], product[starts], year[starts]
    return ExportPanel(firm_ids=firm_ids, products=products,
                       firm=firm.astype(np.int32), product=product.astype(np.int32),
                       year=year.astype(np.int32), value=value, report=report)


# ---------------------------------------------------------------------------
# loaders


def load_exports(path, schema: Mapping[str, str] | None = None, delimiter=",",
                 years: Sequence[int] | None = None, chunksize=1_000_000):
    """Load the firm export table.

    Duplicate ``(firm_id, hs6, year)`` rows are summed. Rows with a malformed
    HS6 code, a non-integer or out-of-range year, or a negative/non-numeric
    value are rejected and listed in ``panel.report``.
    """
    report = LoadReport(path=str(path))
    parts = []
    for chunk in _iter_chunks(path, EXPORT_FIELDS, schema, delimiter, chunksize):
        report.n_rows += len(chunk)
        rejections = []
        hs6 = chunk["hs6"].str.strip()
        firm = chunk["firm_id"].str.strip()
        bad = pd.Series(False, index=chunk.index)
        bad |= _reject(rejections, chunk, firm == "", "firm_id", "empty firm identifier")
        bad |= _reject(rejections, chunk, ~bad & ~hs6.str.fullmatch(_HS6_PATTERN),
                       "hs6", "malformed HS6 code")
        year = _parse_year(chunk, rejections, years, bad)
        value = pd.to_numeric(chunk["value"].str.strip(), errors="coerce")
        bad |= _reject(rejections, chunk, ~bad & ~np.isfinite(value), "value",
                       "value is not a finite number")
        bad |= _reject(rejections, chunk, ~bad & (value < 0), "value", "negative export value")
        rejections.sort(key=lambda r: r.line)
        report.rejections.extend(rejections)
        report.value_rejected += float(value[bad & np.isfinite(value)].sum())
        ok = ~bad
        parts.append((firm[ok].to_numpy(dtype=object), hs6[ok].to_numpy(dtype=object),
                      year[ok].to_numpy(dtype=np.int64), value[ok].to_numpy(dtype=np.float64)))
    if parts:
        firm, hs6, year, value = (np.concatenate(c) for c in zip(*parts))
    else:
        firm = hs6 = np.empty(0, dtype=object)
        year, value = np.empty(0, dtype=np.int64), np.empty(0)
    report.n_accepted = len(value)
    report.value_accepted = float(value.sum())
    panel = _build_panel(firm, hs6, year, value, report=report)
    logger.info("loaded %d export rows from %s (%d rejected, %d merged)", report.n_rows,
                path, report.n_rejected, report.n_duplicates_merged)
    return panel


def load_financials(path, schema=None, delimiter=",", years=None):
    """Load yearly firm financials.

    Empty numeric cells are kept as explicit gaps (NaN). A row with a
    non-positive employee count, unparsable numbers or a repeated
    ``(firm_id, year)`` key is rejected.
    """
    report = LoadReport(path=str(path))
    frames = []
    for chunk in _iter_chunks(path, FINANCIAL_FIELDS, schema, delimiter, 1_000_000):
        report.n_rows += len(chunk)
        rejections = []
        bad = pd.Series(False, index=chunk.index)
        firm = chunk["firm_id"].str.strip()
        bad |= _reject(rejections, chunk, firm == "", "firm_id", "empty firm identifier")
        year = _parse_year(chunk, rejections, years, bad)
        parsed = {}
        for col in ("employees", "operating_revenue", "net_income"):
            raw = chunk[col].str.strip()
            num = pd.to_numeric(raw, errors="coerce")
            empty = raw == ""
            bad |= _reject(rejections, chunk, ~bad & ~empty & ~np.isfinite(num), col,
                           "not a finite number")
            parsed[col] = num.where(~empty)
        emp = parsed["employees"]
        bad |= _reject(rejections, chunk, ~bad & emp.notna() & (emp < 1), "employees",
                       "employees must be at least 1")
        rejections.sort(key=lambda r: r.line)
        report.rejections.extend(rejections)
        ok = ~bad
        frames.append(pd.DataFrame({"firm_id": firm[ok], "year": year[ok].astype(np.int64),
                                    **{k: v[ok].astype(np.float64) for k, v in parsed.items()},
                                    "_line": chunk.index[ok]}))
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["firm_id", "year", "employees", "operating_revenue", "net_income", "_line"])
    dup = frame.duplicated(["firm_id", "year"], keep="first")
    for line, fid in zip(frame.loc[dup, "_line"], frame.loc[dup, "firm_id"]):
        report.rejections.append(Rejection(int(line), "firm_id", "duplicate (firm_id, year)", fid))
    report.rejections.sort(key=lambda r: r.line)
    frame = (frame.loc[~dup].drop(columns="_line").sort_values(["firm_id", "year"])
             .reset_index(drop=True))
    frame["year"] = frame["year"].astype(np.int64)
    report.n_accepted = len(frame)
    return FinancialPanel(frame=frame, report=report)


def load_gdp(path, schema=None, delimiter=","):
    """Load GDP per capita by country. Any non-positive value is fatal."""
    chunks = list(_iter_chunks(path, GDP_FIELDS, schema, delimiter, 1_000_000))
    frame = pd.concat(chunks) if chunks else pd.DataFrame(columns=list(GDP_FIELDS))
    country = frame["country"].str.strip()
    gdp = pd.to_numeric(frame["gdp_pc"].str.strip(), errors="coerce")
    bad = ~np.isfinite(gdp) | (gdp <= 0)
    if bad.any():
        line = int(frame.index[bad.to_numpy()][0])
        raise ValidationError(
            f"{path}:{line}: gdp_pc must be a positive number (log GDP per capita "
            f"undefined otherwise), got {frame['gdp_pc'][bad].iloc[0]!r}")
    if country.duplicated().any():
        dup = list(country[country.duplicated()])[:5]
        raise ValidationError(f"{path}: duplicate countries {dup}")
    if (country == "").any():
        raise ValidationError(f"{path}: empty country code")
    return GdpTable(gdp_pc=pd.Series(gdp.to_numpy(dtype=np.float64), index=country.to_numpy(),
                                     name="gdp_pc").sort_index())


def load_hs_map(path, schema=None, delimiter=",", require_all_sections=True):
    """Load the HS6 classification map. Any inconsistency is fatal."""
    chunks = list(_iter_chunks(path, HS_MAP_FIELDS, schema, delimiter, 1_000_000))
    frame = pd.concat(chunks) if chunks else pd.DataFrame(columns=list(HS_MAP_FIELDS))
    frame = frame.apply(lambda s: s.str.strip())
    return make_hs_map(frame, require_all_sections=require_all_sections, source=str(path))


def make_hs_map(frame, require_all_sections=True, source="hs_map"):
    """Validate an in-memory HS map frame with the four canonical columns."""
    frame = frame[list(HS_MAP_FIELDS)].copy()
    hs6 = frame["hs6"].astype(str)
    hs4 = frame["hs4"].astype(str)
    if not hs6.str.fullmatch(_HS6_PATTERN).all():
        bad = list(hs6[~hs6.str.fullmatch(_HS6_PATTERN)][:5])
        raise ValidationError(f"{source}: malformed HS6 codes {bad}")
    if not (hs4 == hs6.str[:4]).all():
        raise ValidationError(f"{source}: hs4 must equal the first four digits of hs6")
    if hs6.duplicated().any():
        raise ValidationError(f"{source}: duplicate HS6 codes {list(hs6[hs6.duplicated()][:5])}")
    section = pd.to_numeric(frame["section_index"], errors="coerce")
    if section.isna().any() or (section != np.floor(section)).any() or (
            (section < 1) | (section > N_SECTIONS)).any():
        raise ValidationError(f"{source}: section_index must be an integer in 1..{N_SECTIONS}")
    section = section.astype(np.int64)
    if require_all_sections and section.nunique() != N_SECTIONS:
        raise ValidationError(
            f"{source}: expected {N_SECTIONS} sections, found {section.nunique()}")
    labels = frame.assign(section_index=section).groupby("section_index")["section_label"].nunique()
    if (labels > 1).any():
        raise ValidationError(
            f"{source}: sections with several labels: {list(labels[labels > 1].index)}")
    out = pd.DataFrame({"hs4": hs4.to_numpy(), "section_index": section.to_numpy(),
                        "section_label": frame["section_label"].astype(str).to_numpy()},
                       index=pd.Index(hs6.to_numpy(), name="hs6")).sort_index()
    return HsMap(frame=out)


def load_world_trade(path, schema=None, delimiter=","):
    """Load the country x product trade table; duplicate pairs are summed."""
    report = LoadReport(path=str(path))
    frames = []
    for chunk in _iter_chunks(path, WORLD_TRADE_FIELDS, schema, delimiter, 1_000_000):
        report.n_rows += len(chunk)
        rejections = []
        bad = pd.Series(False, index=chunk.index)
        country = chunk["country"].str.strip()
        hs6 = chunk["hs6"].str.strip()
        bad |= _reject(rejections, chunk, country == "", "country", "empty country code")
        bad |= _reject(rejections, chunk, ~bad & ~hs6.str.fullmatch(_HS6_PATTERN), "hs6",
                       "malformed HS6 code")
        value = pd.to_numeric(chunk["value"].str.strip(), errors="coerce")
        bad |= _reject(rejections, chunk, ~bad & ~np.isfinite(value), "value",
                       "value is not a finite number")
        bad |= _reject(rejections, chunk, ~bad & (value < 0), "value", "negative export value")
        rejections.sort(key=lambda r: r.line)
        report.rejections.extend(rejections)
        ok = ~bad
        frames.append(pd.DataFrame({"country": country[ok], "hs6": hs6[ok], "value": value[ok]}))
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["country", "hs6", "value"])
    frame = (frame.groupby(["country", "hs6"], as_index=False, sort=True)["value"].sum())
    report.n_accepted = len(frame)
    return WorldTrade(frame=frame, report=report)


def check_hs_coverage(panel, hs_map):
    """Fail if any exported product is absent from the HS map."""
    missing = pd.Index(panel.products).difference(hs_map.frame.index)
    if len(missing):
        raise ValidationError(f"{len(missing)} exported HS6 codes missing from the HS map, "
                              f"e.g. {list(missing[:5])}")


# ---------------------------------------------------------------------------
# writers


def write_exports(panel, path, delimiter=","):
    panel.to_frame().to_csv(path, sep=delimiter, index=False)


def write_financials(fin, path, delimiter=","):
    fin.frame.to_csv(path, sep=delimiter, index=False, columns=list(FINANCIAL_FIELDS))


def write_gdp(gdp, path, delimiter=","):
    gdp.gdp_pc.rename_axis("country").reset_index().to_csv(path, sep=delimiter, index=False)


def write_hs_map(hs_map, path, delimiter=","):
    hs_map.frame.reset_index().to_csv(path, sep=delimiter, index=False,
                                      columns=list(HS_MAP_FIELDS))


def write_world_trade(world, path, delimiter=","):
    world.frame.to_csv(path, sep=delimiter, index=False, columns=list(WORLD_TRADE_FIELDS))


# ---------------------------------------------------------------------------
# filtering


def filter_persistent_firms(panel, years):
    """Keep firms with a positive export record in every year of ``years``.

    ``years`` is an inclusive ``(first, last)`` pair. All records of the
    surviving firms are retained, including those outside the range.
    """
    first, last = int(years[0]), int(years[1])
    if last < first:
        raise ValidationError(f"empty year range {years}")
    n_years = last - first + 1
    in_range = (panel.year >= first) & (panel.year <= last) & (panel.value > 0)
    pairs = np.unique(panel.firm[in_range].astype(np.int64) * (n_years + 1)
                      + (panel.year[in_range] - first))
    counts = np.bincount(pairs // (n_years + 1), minlength=len(panel.firm_ids))
    keep = counts == n_years
    panel = panel.subset(keep[panel.firm])
    logger.info("%d of %d firms export in every year %d-%d", int(keep.sum()), len(keep),
                first, last)
    return panel
