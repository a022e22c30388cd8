"""Data model, CSV ingestion, connectivity vectorization, and a synthetic cohort generator.

A dataset is a pair (FeatureMatrix, list[AcquisitionRecord]) with identical row
order. Acquisitions are the unit of analysis: one subject may contribute several
acquisitions (longitudinal scans), all sharing the subject's label.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ContractError,
    DomainError,
    FormatError,
    IntegrityError,
    ParameterError,
    ParseError,
)

UNKNOWN_LABEL = -1

PHENOTYPE_COLUMNS = ("acquisition_id", "subject_id", "label", "site", "sex", "age", "gene_flag")


@dataclass(frozen=True)
class AcquisitionRecord:
    """One imaging acquisition plus its non-imaging measures."""

    acquisition_id: str
    subject_id: str
    label: int  # 0, 1, or UNKNOWN_LABEL
    site: str
    sex: str
    age: float
    gene_flag: str | None = None

    def __post_init__(self):
        if self.label not in (0, 1, UNKNOWN_LABEL):
            raise IntegrityError(f"label must be 0, 1 or unknown; got {self.label!r}")
        if self.age < 0:
            raise IntegrityError(f"age must be >= 0; got {self.age}")

    @property
    def has_label(self) -> bool:
        return self.label != UNKNOWN_LABEL


@dataclass
class FeatureMatrix:
    """N acquisitions x C features, row order matching the phenotype table."""

    ids: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ContractError(f"feature matrix must be 2-D, got shape {self.values.shape}")
        n, c = self.values.shape
        if n < 2:
            raise IntegrityError(f"N >= 2 required, got {n} rows")
        if c < 1:
            raise IntegrityError(f"C >= 1 required, got {c} columns")
        if len(self.ids) != n:
            raise ContractError(f"{len(self.ids)} ids for {n} rows")
        if len(set(self.ids)) != n:
            raise IntegrityError("duplicate acquisition_id in feature matrix")
        if not np.all(np.isfinite(self.values)):
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise IntegrityError(f"non-finite feature value at row {bad[0]}, column {bad[1]}")

    @property
    def n_acquisitions(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the synthetic multi-site longitudinal cohort.

    Feature vectors are built additively: a class mean (+/- class_separation/2
    along a random unit direction), a per-site shift (mostly aligned with the
    class direction, scale site_shift_scale, so that site membership confounds
    a feature-only classifier), a sex shift along an independent direction, a
    per-subject latent of scale noise_scale shared by all of a subject's scans,
    and i.i.d. per-scan noise of scale 0.25 * noise_scale. Sex, site and gene
    flag are drawn independently of the label.
    """

    n_subjects: int = 600
    scans_per_subject: tuple[int, int] = (1, 3)
    n_sites: int = 4
    n_features: int = 12
    class_separation: float = 2.5
    site_shift_scale: float = 1.5
    sex_effect: float = 0.8
    noise_scale: float = 1.0
    seed: int = 0

    def validate(self):
        lo, hi = self.scans_per_subject
        if self.n_subjects < 1 or self.n_sites < 1 or self.n_features < 1:
            raise ParameterError("all counts must be >= 1")
        if lo < 1 or hi < lo:
            raise ParameterError(f"scans_per_subject range invalid: {self.scans_per_subject}")
        if self.class_separation < 0 or self.site_shift_scale < 0:
            raise ParameterError("class_separation and site_shift_scale must be >= 0")
        if self.noise_scale <= 0:
            raise ParameterError("noise_scale must be > 0")


def _parse_label(cell: str) -> int:
    if cell == "?":
        return UNKNOWN_LABEL
    if cell in ("0", "1"):
        return int(cell)
    raise IntegrityError(f"label must be 0, 1 or '?'; got {cell!r}")


def load_features(path) -> FeatureMatrix:
    """Read a features CSV with header ``acquisition_id,f0,f1,...``.

    Row and column indices in error messages are 0-based over the data section
    (header and id column excluded).

    Raises:
        FormatError: missing header, no feature columns, or ragged rows.
        ParseError: non-numeric cell, citing (row, col).
        IntegrityError: duplicate ids, fewer than 2 rows, non-finite values.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file, header row required") from None
        if not header or header[0] != "acquisition_id":
            raise FormatError(f"{path}: first header column must be 'acquisition_id'")
        n_cols = len(header)
        if n_cols < 2:
            raise FormatError(f"{path}: at least one feature column required")

        ids: list[str] = []
        rows: list[list[float]] = []
        for r, cells in enumerate(reader):
            if len(cells) != n_cols:
                raise FormatError(
                    f"{path}: ragged row {r}: expected {n_cols} cells, got {len(cells)}"
                )
            ids.append(cells[0])
            values = []
            for c, cell in enumerate(cells[1:]):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: non-numeric value {cell!r} at row {r}, column {c}",
                        row=r,
                        col=c,
                    ) from None
            rows.append(values)

    if len(rows) < 2:
        raise IntegrityError(f"{path}: N >= 2 required, got {len(rows)} data rows")
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise IntegrityError(f"{path}: duplicate acquisition_id {dup!r}")
    return FeatureMatrix(ids=ids, values=np.array(rows, dtype=np.float64))


def load_phenotypes(path) -> list[AcquisitionRecord]:
    """Read a phenotype CSV; records come back in file order.

    Required columns: acquisition_id, subject_id, label, site, sex, age,
    gene_flag (value may be empty -> None). Label '?' marks an unlabeled
    acquisition.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file, header row required") from None
        missing = [c for c in PHENOTYPE_COLUMNS if c not in header]
        if missing:
            raise FormatError(f"{path}: missing required column(s) {', '.join(missing)}")
        col = {name: header.index(name) for name in PHENOTYPE_COLUMNS}

        records: list[AcquisitionRecord] = []
        seen: set[str] = set()
        for r, cells in enumerate(reader):
            if len(cells) != len(header):
                raise FormatError(
                    f"{path}: ragged row {r}: expected {len(header)} cells, got {len(cells)}"
                )
            acq_id = cells[col["acquisition_id"]]
            if acq_id in seen:
                raise IntegrityError(f"{path}: duplicate acquisition_id {acq_id!r}")
            seen.add(acq_id)
            age_cell = cells[col["age"]]
            try:
                age = float(age_cell)
            except ValueError:
                raise ParseError(
                    f"{path}: non-numeric age {age_cell!r} at row {r}", row=r
                ) from None
            if age < 0:
                raise IntegrityError(f"{path}: negative age {age} at row {r}")
            gene = cells[col["gene_flag"]]
            records.append(
                AcquisitionRecord(
                    acquisition_id=acq_id,
                    subject_id=cells[col["subject_id"]],
                    label=_parse_label(cells[col["label"]]),
                    site=cells[col["site"]],
                    sex=cells[col["sex"]],
                    age=age,
                    gene_flag=gene if gene != "" else None,
                )
            )
    return records


def write_features(features: FeatureMatrix, path):
    """Write a features CSV that load_features reads back exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["acquisition_id"] + [f"f{j}" for j in range(features.n_features)])
        for i, acq_id in enumerate(features.ids):
            writer.writerow([acq_id] + [repr(float(v)) for v in features.values[i]])


def write_phenotypes(records: list[AcquisitionRecord], path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(PHENOTYPE_COLUMNS))
        for rec in records:
            label = "?" if rec.label == UNKNOWN_LABEL else str(rec.label)
            writer.writerow(
                [
                    rec.acquisition_id,
                    rec.subject_id,
                    label,
                    rec.site,
                    rec.sex,
                    repr(float(rec.age)),
                    rec.gene_flag if rec.gene_flag is not None else "",
                ]
            )


def load_dataset(features_path, phenotypes_path) -> tuple[FeatureMatrix, list[AcquisitionRecord]]:
    """Load both files and verify row alignment by acquisition_id."""
    features = load_features(features_path)
    records = load_phenotypes(phenotypes_path)
    if features.ids != [r.acquisition_id for r in records]:
        raise IntegrityError(
            "feature matrix and phenotype table disagree on acquisition ids or order"
        )
    return features, records


def labels_array(records: list[AcquisitionRecord]) -> np.ndarray:
    return np.array([r.label for r in records], dtype=np.int64)


def vectorize_connectivity(matrix) -> np.ndarray:
    """Strict upper triangle of a symmetric R x R matrix, row-major.

    Output length is R(R-1)/2; the pair order is (0,1), (0,2), ..., (R-2,R-1).
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractError(f"square matrix required, got shape {m.shape}")
    r = m.shape[0]
    if r < 2:
        raise ContractError(f"R >= 2 required, got {r}")
    asym = np.max(np.abs(m - m.T))
    if asym > 1e-8:
        raise IntegrityError(f"matrix asymmetric: max |M - M^T| = {asym:.3e} > 1e-08")
    iu, ju = np.triu_indices(r, k=1)
    return m[iu, ju]


def fisher_transform(r):
    """arctanh(r), defined for |r| < 1; accepts scalars or arrays."""
    arr = np.asarray(r, dtype=np.float64)
    if np.any(np.abs(arr) >= 1.0):
        raise DomainError("fisher_transform requires |r| < 1")
    out = np.arctanh(arr)
    return float(out) if np.isscalar(r) or arr.ndim == 0 else out


def generate_synthetic(cfg: SyntheticConfig) -> tuple[FeatureMatrix, list[AcquisitionRecord]]:
    """Generate a deterministic synthetic cohort; see SyntheticConfig for the model.

    Subject-level labels are balanced to within one subject. All scans of a
    subject share its label, subject latent, site, sex and gene flag.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n_subj = cfg.n_subjects
    c = cfg.n_features

    # Balanced subject labels, order shuffled so id and label are independent.
    subj_labels = np.array([i % 2 for i in range(n_subj)], dtype=np.int64)
    rng.shuffle(subj_labels)

    def unit(vec):
        return vec / np.linalg.norm(vec)

    class_dir = unit(rng.standard_normal(c))
    sex_dir = unit(rng.standard_normal(c))
    # Site shifts confound the class direction on purpose: a feature-only
    # classifier cannot tell a site offset from a class offset.
    site_axis = rng.standard_normal(cfg.n_sites)
    site_ortho = rng.standard_normal((cfg.n_sites, c))
    site_shifts = cfg.site_shift_scale * (
        site_axis[:, None] * class_dir[None, :]
        + 0.35 * site_ortho / np.sqrt(c)
    )

    subj_sites = rng.integers(0, cfg.n_sites, size=n_subj)
    subj_sexes = rng.integers(0, 2, size=n_subj)  # 0 -> F, 1 -> M
    subj_genes = rng.integers(0, 2, size=n_subj)  # 0 -> noncarrier, 1 -> carrier
    subj_ages = rng.uniform(8.0, 70.0, size=n_subj)
    subj_latents = rng.standard_normal((n_subj, c)) * cfg.noise_scale
    lo, hi = cfg.scans_per_subject
    subj_scans = rng.integers(lo, hi + 1, size=n_subj)

    ids: list[str] = []
    records: list[AcquisitionRecord] = []
    rows: list[np.ndarray] = []
    for s in range(n_subj):
        label = int(subj_labels[s])
        mean = (cfg.class_separation / 2.0) * (1.0 if label == 1 else -1.0) * class_dir
        mean = mean + site_shifts[subj_sites[s]]
        mean = mean + (cfg.sex_effect / 2.0) * (1.0 if subj_sexes[s] == 1 else -1.0) * sex_dir
        mean = mean + subj_latents[s]
        subject_id = f"s{s:04d}"
        age = subj_ages[s]
        for t in range(int(subj_scans[s])):
            scan_noise = rng.standard_normal(c) * (0.25 * cfg.noise_scale)
            rows.append(mean + scan_noise)
            acq_id = f"{subject_id}_t{t}"
            ids.append(acq_id)
            records.append(
                AcquisitionRecord(
                    acquisition_id=acq_id,
                    subject_id=subject_id,
                    label=label,
                    site=f"site{subj_sites[s]}",
                    sex="M" if subj_sexes[s] == 1 else "F",
                    age=float(age),
                    gene_flag="carrier" if subj_genes[s] == 1 else "noncarrier",
                )
            )
            age += float(rng.uniform(0.4, 1.2))  # later visits

    features = FeatureMatrix(ids=ids, values=np.vstack(rows))
    return features, records
