"""Mini-MIAS metadata, dataset assembly, stratified splitting and balancing."""
from __future__ import annotations

import logging
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from .image import GrayImage, PgmDecodeError, read_pgm
from .rng import SplitMix64

log = logging.getLogger(__name__)

ABNORMALITIES = ("CALC", "CIRC", "SPIC", "MISC", "ARCH", "ASYM", "NORM")
SEVERITIES = ("Benign", "Malignant", "Normal")
TISSUES = ("F", "G", "D")
_SEVERITY_TOKENS = {"B": "Benign", "M": "Malignant"}

# Published class tables, kept for comparison in the ingest summary only.
REFERENCE_ABNORMALITY_COUNTS = {
    "CALC": 34, "CIRC": 24, "SPIC": 24, "MISC": 18, "ARCH": 12, "ASYM": 21, "NORM": 189,
}
REFERENCE_SEVERITY_COUNTS = {"Benign": 67, "Malignant": 54, "Normal": 201}

INFO_FILE_NAMES = ("Info.txt", "info.txt", "INFO.TXT")


class MetadataError(ValueError):
    def __init__(self, line_no: int, line: str, reason: str):
        super().__init__(f"line {line_no}: {reason}: {line.strip()!r}")
        self.line_no = line_no
        self.reason = reason


@dataclass(frozen=True)
class MiasRecord:
    id: str
    tissue: str
    abnormality: str
    severity: str
    center: tuple[int, int] | None = None
    radius: int | None = None

    def __post_init__(self):
        if self.tissue not in TISSUES:
            raise ValueError(f"{self.id}: unknown tissue {self.tissue!r}")
        if self.abnormality not in ABNORMALITIES:
            raise ValueError(f"{self.id}: unknown abnormality {self.abnormality!r}")
        if self.severity not in SEVERITIES:
            raise ValueError(f"{self.id}: unknown severity {self.severity!r}")
        if (self.abnormality == "NORM") != (self.severity == "Normal"):
            raise ValueError(f"{self.id}: NORM iff Normal violated "
                             f"({self.abnormality}/{self.severity})")
        if self.abnormality == "NORM" and (self.center is not None or self.radius is not None):
            raise ValueError(f"{self.id}: normal record must not carry a center or radius")

    @property
    def label7(self) -> int:
        return ABNORMALITIES.index(self.abnormality)

    @property
    def label3(self) -> int:
        return SEVERITIES.index(self.severity)

    def center_rowcol(self, height: int) -> tuple[int, int] | None:
        """Center as (row, col); info-file y coordinates count up from the bottom edge."""
        if self.center is None:
            return None
        x, y = self.center
        return height - 1 - y, x

    def to_line(self) -> str:
        parts = [self.id, self.tissue, self.abnormality]
        if self.abnormality != "NORM":
            parts.append(self.severity[0])
            if self.center is not None:
                parts += [str(self.center[0]), str(self.center[1])]
                if self.radius is not None:
                    parts.append(str(self.radius))
        return " ".join(parts)


def _is_int(token: str) -> bool:
    return token.lstrip("+-").isdigit()


def scan_mias_metadata(text: str) -> tuple[list[MiasRecord], list[tuple[int, str]]]:
    """Parse an info file, returning records and the (line number, text) of skipped lines.

    A line is a record candidate when its second field is a tissue code; anything
    else (blank lines, prose headers, ``#`` comments) is skipped and reported.
    """
    records: list[MiasRecord] = []
    skipped: list[tuple[int, str]] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0].startswith("#") or len(tokens) < 3 or tokens[1] not in TISSUES:
            skipped.append((line_no, line))
            continue
        rec_id, tissue, cls = tokens[:3]
        if cls not in ABNORMALITIES:
            raise MetadataError(line_no, line, f"unknown class token {cls!r}")
        if cls == "NORM":
            records.append(MiasRecord(rec_id, tissue, cls, "Normal"))
            continue
        if len(tokens) < 4 or tokens[3] not in _SEVERITY_TOKENS:
            sev = tokens[3] if len(tokens) > 3 else "<missing>"
            raise MetadataError(line_no, line, f"severity must be B or M on abnormal record, got {sev!r}")
        nums = []
        for tok in tokens[4:]:
            if not _is_int(tok):
                break
            nums.append(int(tok))
        center = (nums[0], nums[1]) if len(nums) >= 2 else None
        radius = nums[2] if len(nums) >= 3 else None
        records.append(MiasRecord(rec_id, tissue, cls, _SEVERITY_TOKENS[tokens[3]], center, radius))
    return records, skipped


def parse_mias_metadata(text: str) -> list[MiasRecord]:
    records, skipped = scan_mias_metadata(text)
    for line_no, line in skipped:
        log.warning("skipped unparseable metadata line %d: %r", line_no, line.strip())
    return records


@dataclass
class Sample:
    record: MiasRecord
    image: GrayImage | None = None
    path: str | None = None
    duplicate: bool = False

    def load(self) -> GrayImage:
        if self.image is None:
            if self.path is None:
                raise ValueError(f"{self.record.id}: sample has neither image nor path")
            self.image = read_pgm(self.path)
        return self.image


@dataclass
class Dataset:
    samples: list[Sample] = field(default_factory=list)
    split_seed: int | None = None

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def ids(self) -> list[str]:
        return [s.record.id for s in self.samples]

    def class_counts(self, key: str = "abnormality") -> dict[str, int]:
        counts = Counter(getattr(s.record, key) for s in self.samples)
        order = ABNORMALITIES if key == "abnormality" else SEVERITIES
        return {c: counts[c] for c in order if counts[c]}

    def check_unique(self) -> None:
        dup = [i for i, n in Counter(self.ids).items() if n > 1]
        if dup and not any(s.duplicate for s in self.samples):
            raise ValueError(f"duplicate ids before balancing: {dup[:5]}")


def dedupe_records(records: list[MiasRecord]) -> tuple[list[MiasRecord], list[str]]:
    """Keep the first line per image id; return the ids that had several lines."""
    seen: dict[str, MiasRecord] = {}
    multi: list[str] = []
    for rec in records:
        if rec.id in seen:
            if rec.id not in multi:
                multi.append(rec.id)
            continue
        seen[rec.id] = rec
    return list(seen.values()), multi


def _grouped(dataset: Dataset, key: str) -> dict[str, list[Sample]]:
    order = ABNORMALITIES if key == "abnormality" else SEVERITIES
    groups: dict[str, list[Sample]] = {c: [] for c in order}
    for s in dataset.samples:
        groups[getattr(s.record, key)].append(s)
    for members in groups.values():
        members.sort(key=lambda s: s.record.id)
    return groups


def split_train_val(dataset: Dataset, train_fraction: float, seed: int,
                    key: str = "abnormality") -> tuple[Dataset, Dataset]:
    """Stratified split; each class contributes ceil(train_fraction * size) to training.

    Members of a class are sorted by id, shuffled with :class:`SplitMix64`
    (one stream, classes visited in canonical order) and cut.
    """
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    frac = Fraction(train_fraction).limit_denominator(10**6)
    rng = SplitMix64(seed)
    train: list[Sample] = []
    val: list[Sample] = []
    for cls, members in _grouped(dataset, key).items():
        if not members:
            if dataset.samples:
                log.warning("class %s has no members; skipped in split", cls)
            continue
        members = list(members)
        rng.shuffle(members)
        n_train = -(-(frac.numerator * len(members)) // frac.denominator)
        train += members[:n_train]
        val += members[n_train:]
    return Dataset(train, seed), Dataset(val, seed)


def balance_classes(dataset: Dataset, seed: int, key: str = "abnormality") -> Dataset:
    """Oversample every class with replacement up to the largest class count."""
    groups = {c: m for c, m in _grouped(dataset, key).items() if m}
    if not groups:
        raise ValueError("cannot balance an empty dataset")
    target = max(len(m) for m in groups.values())
    rng = SplitMix64(seed)
    out: list[Sample] = []
    for members in groups.values():
        out += members
        for _ in range(target - len(members)):
            src = members[rng.randbelow(len(members))]
            out.append(replace(src, duplicate=True))
    return Dataset(out, dataset.split_seed)


def find_info_file(directory: str | os.PathLike) -> Path:
    directory = Path(directory)
    for name in INFO_FILE_NAMES:
        if (directory / name).is_file():
            return directory / name
    raise FileNotFoundError(f"no info file ({' / '.join(INFO_FILE_NAMES)}) in {directory}")


def load_dataset(directory: str | os.PathLike, *, eager: bool = False) -> tuple[Dataset, dict]:
    """Build a dataset from an info file plus ``{id}.pgm`` images.

    Returns the dataset (records with readable images only) and an ingest
    summary dict listing missing and corrupt files.
    """
    directory = Path(directory)
    info = find_info_file(directory)
    records, skipped = scan_mias_metadata(info.read_text(encoding="latin-1"))
    records, multi = dedupe_records(records)
    samples, missing, corrupt = [], [], []
    for rec in records:
        path = directory / f"{rec.id}.pgm"
        if not path.is_file():
            missing.append(path.name)
            continue
        sample = Sample(rec, path=str(path))
        try:
            img = read_pgm(path)
        except PgmDecodeError as exc:
            corrupt.append({"file": path.name, "error": str(exc)})
            continue
        if eager:
            sample.image = img
        samples.append(sample)
    dataset = Dataset(samples)
    summary = ingest_summary(records)
    summary.update(
        info_file=info.name,
        skipped_lines=[{"line": n, "text": t.strip()} for n, t in skipped],
        multi_abnormality_ids=multi,
        missing_files=missing,
        corrupt_files=corrupt,
        usable_images=len(samples),
    )
    return dataset, summary


def ingest_summary(records: list[MiasRecord]) -> dict:
    """Per-class counts with differences against the published tables."""
    abn = Counter(r.abnormality for r in records)
    sev = Counter(r.severity for r in records)
    abn_counts = {c: abn[c] for c in ABNORMALITIES}
    sev_counts = {c: sev[c] for c in SEVERITIES}
    discrepancies = []
    for table, ref, got in (("abnormality", REFERENCE_ABNORMALITY_COUNTS, abn_counts),
                            ("severity", REFERENCE_SEVERITY_COUNTS, sev_counts)):
        for cls, expected in ref.items():
            if got[cls] != expected:
                discrepancies.append({"table": table, "class": cls,
                                      "reference": expected, "observed": got[cls]})
    # the two published tables disagree with each other on the normal count
    if REFERENCE_ABNORMALITY_COUNTS["NORM"] != REFERENCE_SEVERITY_COUNTS["Normal"]:
        discrepancies.append({"table": "reference", "class": "NORM/Normal",
                              "abnormality_table": REFERENCE_ABNORMALITY_COUNTS["NORM"],
                              "severity_table": REFERENCE_SEVERITY_COUNTS["Normal"]})
    return {
        "total": len(records),
        "abnormality_counts": abn_counts,
        "severity_counts": sev_counts,
        "discrepancies": discrepancies,
    }
