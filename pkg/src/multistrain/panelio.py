"""Delimited file formats for panels, populations, adjacency, and draws.

Every format starts with a versioned header line so files identify
themselves and future revisions can stay readable. All files are plain
comma-separated text; see the format notes in the README for the exact
column contracts.

Panel files are long format with one row per typed cell:

    location,month,strain,count,missing,untyped

Months are 1..T and strains 1..K. A cell where typing failed carries a
single row with strain 0, the overall total in the count column, and
the untyped flag set; a typed cell whose count was never recorded sets
the missing flag. Population files share the location labels and may
list only anchor months (census years, say) when the reader is asked
to interpolate. Draw files carry a JSON manifest on the header line
followed by one fixed-precision row per kept draw, which makes reruns
byte-identical and the file self-describing.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np

from .exceptions import ValidationError
from .likelihood import IncidencePanel
from .mcmc import PosteriorDraws, SamplerConfig

PANEL_HEADER = "# multistrain panel v1"
POPULATION_HEADER = "# multistrain populations v1"
ADJACENCY_HEADER = "# multistrain adjacency v1"
DRAWS_HEADER = "# multistrain draws v1"

_PANEL_COLUMNS = ["location", "month", "strain", "count", "missing", "untyped"]


def _read_rows(path: Path, expected_header: str, columns: list[str]):
    """Yield (line_number, row dict) after checking the two header lines."""
    with open(path, newline="") as handle:
        first = handle.readline().rstrip("\n")
        if first != expected_header:
            raise ValidationError(
                f"{path}: expected header {expected_header!r}, found {first!r}"
            )
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: missing column header") from None
        if [c.strip() for c in header] != columns:
            raise ValidationError(
                f"{path}: expected columns {','.join(columns)}, "
                f"got {','.join(header)}"
            )
        for offset, row in enumerate(reader):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            line = offset + 3  # header lines occupy 1 and 2
            if len(row) != len(columns):
                raise ValidationError(
                    f"{path}:{line}: expected {len(columns)} fields, got {len(row)}"
                )
            yield line, dict(zip(columns, (field.strip() for field in row)))


def _parse_int(value: str, path: Path, line: int, column: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ValidationError(
            f"{path}:{line}: {column} must be an integer, got {value!r}"
        ) from None


def _parse_flag(value: str, path: Path, line: int, column: str) -> bool:
    if value not in ("0", "1"):
        raise ValidationError(
            f"{path}:{line}: {column} must be 0 or 1, got {value!r}"
        )
    return value == "1"


def read_panel(
    panel_path,
    populations_path,
    season_length: int = 12,
    interpolate_populations: bool = False,
) -> IncidencePanel:
    """Load a long-format panel plus its population file.

    Location order follows first appearance in the panel file; the
    population file must cover the same labels. Validation failures
    report the offending file and line.
    """
    panel_path = Path(panel_path)
    locations: list[str] = []
    n_strains = 0
    n_months = 0
    typed: dict[tuple[str, int, int], tuple[int, bool]] = {}
    untyped: dict[tuple[str, int], int] = {}
    for line, row in _read_rows(panel_path, PANEL_HEADER, _PANEL_COLUMNS):
        label = row["location"]
        month = _parse_int(row["month"], panel_path, line, "month")
        strain = _parse_int(row["strain"], panel_path, line, "strain")
        count = _parse_int(row["count"], panel_path, line, "count")
        missing = _parse_flag(row["missing"], panel_path, line, "missing")
        is_untyped = _parse_flag(row["untyped"], panel_path, line, "untyped")
        if month < 1:
            raise ValidationError(f"{panel_path}:{line}: month must be >= 1")
        if count < 0:
            raise ValidationError(f"{panel_path}:{line}: negative count")
        if missing and is_untyped:
            raise ValidationError(
                f"{panel_path}:{line}: a row cannot be both missing and untyped"
            )
        if label not in locations:
            locations.append(label)
        n_months = max(n_months, month)
        if is_untyped:
            if strain != 0:
                raise ValidationError(
                    f"{panel_path}:{line}: untyped rows carry the overall "
                    "total and must use strain 0"
                )
            if (label, month) in untyped:
                raise ValidationError(
                    f"{panel_path}:{line}: duplicate untyped row for "
                    f"{label} month {month}"
                )
            untyped[(label, month)] = count
        else:
            if strain < 1:
                raise ValidationError(
                    f"{panel_path}:{line}: typed rows need strain >= 1"
                )
            key = (label, month, strain)
            if key in typed:
                raise ValidationError(
                    f"{panel_path}:{line}: duplicate row for {label} "
                    f"month {month} strain {strain}"
                )
            typed[key] = (count, missing)
            n_strains = max(n_strains, strain)
    if not typed and not untyped:
        raise ValidationError(f"{panel_path}: no data rows")
    if n_strains == 0:
        raise ValidationError(f"{panel_path}: no typed rows define the strain set")

    index = {label: i for i, label in enumerate(locations)}
    I, T, K = len(locations), n_months, n_strains
    counts = np.zeros((I, T, K))
    observed = np.zeros((I, T, K), dtype=bool)
    untyped_mask = np.zeros((I, T), dtype=bool)
    totals = np.zeros((I, T))
    for (label, month), total in untyped.items():
        untyped_mask[index[label], month - 1] = True
        totals[index[label], month - 1] = total
    for (label, month, strain), (count, missing) in typed.items():
        if (label, month) in untyped:
            raise ValidationError(
                f"{panel_path}: {label} month {month} has both typed rows "
                "and an untyped total"
            )
        counts[index[label], month - 1, strain - 1] = count
        observed[index[label], month - 1, strain - 1] = not missing
    for label in locations:
        i = index[label]
        for t in range(T):
            if untyped_mask[i, t]:
                continue
            present = [
                (label, t + 1, k + 1) in typed for k in range(K)
            ]
            if not all(present):
                k = present.index(False) + 1
                raise ValidationError(
                    f"{panel_path}: no row for {label} month {t + 1} strain {k}; "
                    "every location-month needs all strains or an untyped total"
                )

    populations = read_populations(
        populations_path, locations, T, interpolate=interpolate_populations
    )
    return IncidencePanel(
        counts=counts,
        populations=populations,
        observed=observed,
        untyped=untyped_mask,
        totals=totals,
        season_length=season_length,
        location_labels=tuple(locations),
    )


def write_panel(panel: IncidencePanel, path) -> None:
    """Write the canonical long-format file for a panel."""
    labels = panel.location_labels or tuple(
        f"L{i + 1}" for i in range(panel.n_locations)
    )
    with open(path, "w", newline="") as handle:
        handle.write(PANEL_HEADER + "\n")
        writer = csv.writer(handle)
        writer.writerow(_PANEL_COLUMNS)
        for i, label in enumerate(labels):
            for t in range(panel.n_months):
                if panel.untyped[i, t]:
                    writer.writerow(
                        [label, t + 1, 0, int(panel.totals[i, t]), 0, 1]
                    )
                    continue
                for k in range(panel.n_strains):
                    missing = not panel.observed[i, t, k]
                    count = 0 if missing else int(panel.counts[i, t, k])
                    writer.writerow(
                        [label, t + 1, k + 1, count, int(missing), 0]
                    )


def read_populations(
    path,
    locations: list[str] | tuple[str, ...],
    n_months: int,
    interpolate: bool = False,
) -> np.ndarray:
    """Population matrix aligned to the panel's locations and months.

    Without interpolation every location must list every month. With it,
    listed months act as anchors: values between anchors interpolate
    linearly, and months outside the anchor range extend flat.
    """
    path = Path(path)
    seen: dict[tuple[str, int], float] = {}
    for line, row in _read_rows(
        path, POPULATION_HEADER, ["location", "month", "population"]
    ):
        label = row["location"]
        month = _parse_int(row["month"], path, line, "month")
        try:
            value = float(row["population"])
        except ValueError:
            raise ValidationError(
                f"{path}:{line}: population must be numeric"
            ) from None
        if label not in locations:
            raise ValidationError(
                f"{path}:{line}: location {label!r} does not appear in the panel"
            )
        if (label, month) in seen:
            raise ValidationError(
                f"{path}:{line}: duplicate population for {label} month {month}"
            )
        if value <= 0:
            raise ValidationError(f"{path}:{line}: population must be positive")
        seen[(label, month)] = value

    matrix = np.zeros((len(locations), n_months))
    for i, label in enumerate(locations):
        anchors = sorted(
            (month, value) for (who, month), value in seen.items() if who == label
        )
        if not anchors:
            raise ValidationError(f"{path}: no population rows for {label!r}")
        months = np.array([m for m, _ in anchors], dtype=float)
        values = np.array([v for _, v in anchors], dtype=float)
        if interpolate:
            matrix[i] = np.interp(np.arange(1, n_months + 1), months, values)
        else:
            missing = sorted(
                set(range(1, n_months + 1)) - {int(m) for m in months}
            )
            if missing:
                raise ValidationError(
                    f"{path}: {label!r} lacks months {missing[:5]}; pass "
                    "interpolate to fill gaps from anchor months"
                )
            order = {int(m): v for m, v in zip(months, values)}
            matrix[i] = [order[t] for t in range(1, n_months + 1)]
    return matrix


def write_populations(populations: np.ndarray, labels, path) -> None:
    populations = np.asarray(populations, dtype=float)
    with open(path, "w", newline="") as handle:
        handle.write(POPULATION_HEADER + "\n")
        writer = csv.writer(handle)
        writer.writerow(["location", "month", "population"])
        for i, label in enumerate(labels):
            for t in range(populations.shape[1]):
                writer.writerow([label, t + 1, f"{populations[i, t]:.17g}"])


def read_adjacency(path, locations=None) -> np.ndarray:
    """0/1 neighbourhood matrix with labelled rows and columns."""
    path = Path(path)
    with open(path, newline="") as handle:
        first = handle.readline().rstrip("\n")
        if first != ADJACENCY_HEADER:
            raise ValidationError(
                f"{path}: expected header {ADJACENCY_HEADER!r}, found {first!r}"
            )
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[0] != "location":
            raise ValidationError(f"{path}: first column must be 'location'")
        labels = [c.strip() for c in header[1:]]
        rows = []
        row_labels = []
        for offset, row in enumerate(reader):
            if not row:
                continue
            line = offset + 3
            if len(row) != len(labels) + 1:
                raise ValidationError(
                    f"{path}:{line}: expected {len(labels) + 1} fields"
                )
            row_labels.append(row[0].strip())
            for field in row[1:]:
                if field.strip() not in ("0", "1"):
                    raise ValidationError(
                        f"{path}:{line}: adjacency entries must be 0 or 1"
                    )
            rows.append([int(field) for field in row[1:]])
    if row_labels != labels:
        raise ValidationError(f"{path}: row labels must match column labels")
    matrix = np.array(rows, dtype=float)
    if matrix.shape[0] != matrix.shape[1]:
        raise ValidationError(f"{path}: adjacency must be square")
    if np.any(matrix != matrix.T):
        raise ValidationError(f"{path}: adjacency must be symmetric")
    if np.any(np.diag(matrix) != 0):
        raise ValidationError(f"{path}: adjacency diagonal must be zero")
    if locations is not None and list(labels) != list(locations):
        raise ValidationError(
            f"{path}: adjacency labels do not match the panel's locations"
        )
    return matrix


def write_adjacency(matrix: np.ndarray, labels, path) -> None:
    matrix = np.asarray(matrix)
    with open(path, "w", newline="") as handle:
        handle.write(ADJACENCY_HEADER + "\n")
        writer = csv.writer(handle)
        writer.writerow(["location", *labels])
        for label, row in zip(labels, matrix):
            writer.writerow([label, *(int(v) for v in row)])


# ---------------------------------------------------------------------
# posterior draws


def write_draws(draws: PosteriorDraws, path, config_hash: str | None = None) -> None:
    """Self-describing draw file; identical runs produce identical bytes."""
    manifest = {
        "variant": draws.variant,
        "n_strains": draws.n_strains,
        "chain": draws.chain,
        "scalar_names": list(draws.scalar_names),
        "n_months": int(draws.trend.shape[1]),
        "season_length": int(draws.season.shape[1]),
        "n_locations": int(draws.spatial.shape[1]),
        # blocks that never ran have NaN acceptance, which JSON cannot carry
        "acceptance": {
            k: (round(v, 10) if np.isfinite(v) else None)
            for k, v in sorted(draws.acceptance.items())
        },
        "config": dataclasses.asdict(draws.config),
    }
    if config_hash is not None:
        manifest["config_hash"] = config_hash
    columns = (
        list(draws.scalar_names)
        + [f"trend_{t + 1}" for t in range(draws.trend.shape[1])]
        + [f"season_{s + 1}" for s in range(draws.season.shape[1])]
        + [f"spatial_{i + 1}" for i in range(draws.spatial.shape[1])]
        + ["loglik", "logpost"]
    )
    blocks = np.column_stack(
        [draws.scalars, draws.trend, draws.season, draws.spatial,
         draws.loglik, draws.logpost]
    )
    with open(path, "w", newline="") as handle:
        handle.write(
            DRAWS_HEADER + " "
            + json.dumps(manifest, sort_keys=True, separators=(",", ":"),
                         allow_nan=False)
            + "\n"
        )
        handle.write(",".join(columns) + "\n")
        for row in blocks:
            handle.write(",".join(f"{value:.17g}" for value in row) + "\n")


def read_draws(path) -> PosteriorDraws:
    path = Path(path)
    with open(path, newline="") as handle:
        first = handle.readline().rstrip("\n")
        if not first.startswith(DRAWS_HEADER + " "):
            raise ValidationError(
                f"{path}: expected a {DRAWS_HEADER!r} manifest line"
            )
        try:
            manifest = json.loads(first[len(DRAWS_HEADER) + 1:])
        except json.JSONDecodeError as err:
            raise ValidationError(f"{path}: unreadable manifest: {err}") from None
        header = handle.readline().rstrip("\n").split(",")
        data = np.loadtxt(handle, delimiter=",", ndmin=2)
    scalar_names = manifest["scalar_names"]
    T = manifest["n_months"]
    L = manifest["season_length"]
    I = manifest["n_locations"]
    expected = len(scalar_names) + T + L + I + 2
    if data.shape[1] != expected or len(header) != expected:
        raise ValidationError(
            f"{path}: manifest promises {expected} columns, file has "
            f"{data.shape[1]}"
        )
    s = len(scalar_names)
    return PosteriorDraws(
        variant=manifest["variant"],
        n_strains=manifest["n_strains"],
        scalar_names=tuple(scalar_names),
        scalars=data[:, :s],
        trend=data[:, s : s + T],
        season=data[:, s + T : s + T + L],
        spatial=data[:, s + T + L : s + T + L + I],
        loglik=data[:, -2],
        logpost=data[:, -1],
        acceptance={
            k: (float("nan") if v is None else float(v))
            for k, v in manifest["acceptance"].items()
        },
        config=SamplerConfig(**manifest["config"]),
        chain=manifest["chain"],
    )


def draws_config_hash(path) -> str | None:
    """The config hash recorded in a draw file, if any."""
    with open(Path(path)) as handle:
        first = handle.readline().rstrip("\n")
    if not first.startswith(DRAWS_HEADER + " "):
        raise ValidationError(f"{path}: not a draws file")
    manifest = json.loads(first[len(DRAWS_HEADER) + 1:])
    return manifest.get("config_hash")
