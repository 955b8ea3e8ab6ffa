"""Render study results as paper-style tables.

Three layouts: ``coverage`` (generalization study; estimators as rows,
one coverage column per p), ``precision`` (variance and relative
efficiencies, three columns per p), and ``mse`` (long format with one row
per estimator/transform/p carrying the squared bias and variance stack,
ready for plotting). Markdown and CSV emit identical cell strings, so the
two formats round-trip without value changes.
"""

from __future__ import annotations

from .errors import ConfigError

_BASELINES = (("dm", "none"), ("ols_rct", "none"))


def _transform_sort_key(label: str) -> tuple:
    order = {"gram": 0, "en": 1, "dp": 2, "synth": 3}
    head, _, arg = label.partition(":")
    return (order.get(head, 9), float(arg) if arg else 0.0)


def _estimator_name(estimator: str, transform: str) -> str:
    base = {
        "dm": "difference in means",
        "ols_rct": "regression (experiment covariates)",
        "acw": "augmented calibration weighting",
        "ols_aux": "regression (auxiliary prediction)",
        "loop": "leave-one-out ensemble",
    }.get(estimator, estimator)
    if transform and transform != "none":
        return f"{base} [{transform}]"
    return base


def _ordered_keys(rows: list[dict], estimators: tuple[str, ...]) -> list[tuple[str, str]]:
    seen = []
    for base in _BASELINES:
        if any((r["estimator"], r["transform"]) == base for r in rows):
            seen.append(base)
    for estimator in estimators:
        labels = sorted(
            {r["transform"] for r in rows if r["estimator"] == estimator},
            key=_transform_sort_key,
        )
        seen.extend((estimator, label) for label in labels)
    return seen


def _fmt(value, digits: int) -> str:
    if value is None:
        return ""
    return f"{value:.{digits}f}"


def _emit(header: list[str], body: list[list[str]], fmt: str) -> str:
    if fmt == "csv":
        lines = [",".join(header)]
        lines += [",".join(row) for row in body]
        return "\n".join(lines) + "\n"
    if fmt == "markdown":
        widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h) for i, h in enumerate(header)]
        def line(cells):
            return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"
        rule = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
        return "\n".join([line(header), rule] + [line(r) for r in body]) + "\n"
    raise ConfigError(f"unknown format {fmt!r}")


def render_report(rows: list[dict], table: str, fmt: str) -> str:
    """Render one table from results rows (as read from a results CSV)."""
    if not rows:
        raise ConfigError("no result rows to report")
    if table == "coverage":
        return _coverage_table(rows, fmt)
    if table == "precision":
        return _precision_table(rows, fmt)
    if table == "mse":
        return _mse_table(rows, fmt)
    raise ConfigError(f"unknown table {table!r}")


def _coverage_table(rows: list[dict], fmt: str) -> str:
    rows = [r for r in rows if r["study"] == "generalization"]
    if not rows:
        raise ConfigError("no generalization rows in input")
    ps = sorted({r["p"] for r in rows})
    keys = _ordered_keys(rows, ("acw",))
    lookup = {(r["estimator"], r["transform"], r["p"]): r for r in rows}
    header = ["estimator"] + [f"coverage (p={p})" for p in ps]
    body = []
    for estimator, transform in keys:
        cells = [_estimator_name(estimator, transform)]
        for p in ps:
            row = lookup.get((estimator, transform, p))
            cells.append(_fmt(row["coverage"] if row else None, 2))
        body.append(cells)
    return _emit(header, body, fmt)


def _precision_table(rows: list[dict], fmt: str) -> str:
    rows = [r for r in rows if r["study"] == "precision"]
    if not rows:
        raise ConfigError("no precision rows in input")
    ps = sorted({r["p"] for r in rows})
    keys = _ordered_keys(rows, ("ols_aux", "loop"))
    lookup = {(r["estimator"], r["transform"], r["p"]): r for r in rows}
    header = ["estimator"]
    for p in ps:
        header += [f"var (p={p})", f"re_dm (p={p})", f"re_reg (p={p})"]
    body = []
    for estimator, transform in keys:
        cells = [_estimator_name(estimator, transform)]
        for p in ps:
            row = lookup.get((estimator, transform, p))
            cells.append(_fmt(row["var_tau"] if row else None, 3))
            cells.append(_fmt(row["re_dm"] if row else None, 1))
            cells.append(_fmt(row["re_reg"] if row else None, 1))
        body.append(cells)
    return _emit(header, body, fmt)


def _mse_table(rows: list[dict], fmt: str) -> str:
    rows = [r for r in rows if r["study"] == "generalization"]
    if not rows:
        raise ConfigError("no generalization rows in input")
    keys = _ordered_keys(rows, ("acw",))
    header = ["estimator", "transform", "p", "component", "value"]
    body = []
    for estimator, transform in keys:
        for row in sorted(
            (r for r in rows if (r["estimator"], r["transform"]) == (estimator, transform)),
            key=lambda r: r["p"],
        ):
            for component in ("bias2", "variance", "mse"):
                body.append(
                    [
                        estimator,
                        transform,
                        str(row["p"]),
                        component,
                        _fmt(row[component], 6),
                    ]
                )
    return _emit(header, body, fmt)
