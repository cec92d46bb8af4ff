"""Experiment runner: config-driven sweeps, CSV output, and static plots.

Config format: flat ``key = value`` lines, ``#`` comments, blank lines
ignored.  Axis keys (receiver, mod, k, nl, gain, power_dbw) are repeatable;
repeating a key appends to that axis and the sweep runs the Cartesian
product of all axes.  ``power_dbw`` accepts ``a:b:step`` ranges.  A line
containing only ``---`` starts a new section whose rows are appended to the
same CSV (used by presets that need different fixed parameters per series).

The CSV is the single source of truth; plots are derived artifacts.
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

from .channel import Modulation, PhysicalConfig, ReceiverKind, derive_channel_params
from .estimator import AugmentSpec, ConditioningError, _mse_report, assemble_blocks
from .moments import MomentOrderError
from .simulation import ExperimentConfig, run_mc_ber, run_mc_mse

__all__ = [
    "ConfigError",
    "SweepRecord",
    "CSV_FIELDS",
    "PRESETS",
    "parse_config",
    "expand_points",
    "run_sweep",
    "emit_plot",
    "main",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3


class ConfigError(ValueError):
    """Unparseable sweep configuration; message carries file and line number."""


@dataclass
class SweepRecord:
    """One sweep point; field order defines the versioned CSV header."""

    receiver_kind: str
    modulation: str
    M: int
    K: int
    m: int
    n: int | None
    power_dbw: float
    lambda_sig: float
    lambda_bg: float
    gain_A: float | None
    mse_analytical: float | None
    mse_linear_analytical: float | None
    mse_mc: float | None
    mse_stderr: float | None
    ber_lmmse: float | None
    ber_lmmse_nc: float | None
    ber_ml: float | None
    trials: int | None
    seed: int
    regularized_flag: bool
    error: str = ""


CSV_FIELDS = [f.name for f in fields(SweepRecord)]

_AXIS_KEYS = ("receiver", "mod", "k", "nl", "gain", "power_dbw")
_SCALAR_KEYS = ("trials", "seed", "ml_terms", "mc", "detectors")
_PHYSICS_KEYS = (
    "quantum_efficiency", "path_loss", "bit_rate", "wavelength", "background_rate",
    "temperature", "load_resistance", "pmt_spreading", "apd_ionization",
)

_DEFAULTS = {
    "receiver": ["pc"],
    "mod": ["ook"],
    "k": ["3"],
    "nl": ["1,2"],
    "gain": ["100"],
    "power_dbw": ["0"],
    "trials": "100000",
    "seed": "20240",
    "ml_terms": "50",
    "mc": "on",
    "detectors": "",
}


@dataclass
class SweepSection:
    axes: dict
    scalars: dict
    physics: dict


def parse_config(text: str, source: str = "<config>") -> list:
    """Parse config text into sweep sections, reporting errors with line numbers."""
    sections = []
    axes: dict = {}
    scalars: dict = {}
    physics: dict = {}

    def flush():
        if axes or scalars or physics:
            sections.append(SweepSection(dict(axes), dict(scalars), dict(physics)))
            axes.clear()
            scalars.clear()
            physics.clear()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "---":
            flush()
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        value = value.strip()
        if key in _AXIS_KEYS:
            axes.setdefault(key, []).extend(_split_axis_value(key, value, source, lineno))
        elif key in _SCALAR_KEYS:
            scalars[key] = value
        elif key in _PHYSICS_KEYS:
            try:
                physics[key] = float(value)
            except ValueError:
                raise ConfigError(f"{source}:{lineno}: {key} needs a number, got {value!r}") from None
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    flush()
    if not sections:
        raise ConfigError(f"{source}:1: empty configuration")
    return sections


def _split_axis_value(key: str, value: str, source: str, lineno: int) -> list:
    if key in ("power_dbw", "gain") and ":" in value:
        try:
            start, stop, step = (float(p) for p in value.split(":"))
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: {key} range must be a:b:step, got {value!r}") from None
        if step <= 0 or stop < start:
            raise ConfigError(f"{source}:{lineno}: need step > 0 and b >= a in {value!r}")
        count = int((stop - start) / step + 1e-9) + 1
        return [repr(start + i * step) for i in range(count)]
    # nl values keep their comma ("m,n" is one axis entry); other axes split
    # on commas and whitespace.
    parts = [value.strip()] if key == "nl" else [p for p in value.replace(",", " ").split() if p]
    if not parts or not parts[0]:
        raise ConfigError(f"{source}:{lineno}: empty value for axis {key!r}")
    return parts


@dataclass(frozen=True)
class SweepPoint:
    receiver: str
    modulation: Modulation
    k: int
    augment: AugmentSpec
    gain: float
    power_dbw: float
    trials: int
    seed: int
    ml_terms: int
    run_mc: bool
    detectors: frozenset
    physics: tuple


def expand_points(section: SweepSection, overrides: dict | None = None) -> list:
    """Deterministic Cartesian expansion of one section's axes."""
    axes = {key: list(_DEFAULTS[key]) for key in _AXIS_KEYS}
    axes.update({k: list(v) for k, v in section.axes.items()})
    scalars = {k: _DEFAULTS[k] for k in _SCALAR_KEYS}
    scalars.update(section.scalars)
    overrides = overrides or {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key in _AXIS_KEYS:
            axes[key] = [str(v) for v in (value if isinstance(value, (list, tuple)) else [value])]
        else:
            scalars[key] = str(value)
    for key, values in axes.items():
        if not values:
            raise ConfigError(f"axis {key!r} has no values")
    try:
        trials = int(scalars["trials"])
        seed = int(scalars["seed"])
        ml_terms = int(scalars["ml_terms"])
    except ValueError as exc:
        raise ConfigError(f"bad scalar setting: {exc}") from None
    run_mc = str(scalars["mc"]).strip().lower() in ("on", "true", "1", "yes")
    detector_text = str(scalars["detectors"]).strip()
    detectors = frozenset(p.strip() for p in detector_text.split(",") if p.strip())
    physics = tuple(sorted(section.physics.items()))

    points = []
    try:
        for receiver in axes["receiver"]:
            kind = ReceiverKind(receiver.strip().lower())
            for mod_text in axes["mod"]:
                mod = Modulation.parse(mod_text)
                for k_text in axes["k"]:
                    k = int(k_text)
                    for nl_text in axes["nl"]:
                        spec = AugmentSpec.parse(nl_text)
                        for gain_text in axes["gain"]:
                            gain = float(gain_text)
                            for power_text in axes["power_dbw"]:
                                points.append(SweepPoint(
                                    receiver=kind.value,
                                    modulation=mod,
                                    k=k,
                                    augment=spec,
                                    gain=gain,
                                    power_dbw=float(power_text),
                                    trials=trials,
                                    seed=seed,
                                    ml_terms=ml_terms,
                                    run_mc=run_mc,
                                    detectors=detectors,
                                    physics=physics,
                                ))
    except ValueError as exc:
        raise ConfigError(f"bad axis value: {exc}") from None
    return points


def evaluate_point(point: SweepPoint) -> SweepRecord:
    """Analytical MSEs plus optional Monte-Carlo MSE/BER for one grid point."""
    record = SweepRecord(
        receiver_kind=point.receiver,
        modulation=point.modulation.kind,
        M=point.modulation.order,
        K=point.k,
        m=point.augment.m,
        n=point.augment.n if point.augment.augmented else None,
        power_dbw=point.power_dbw,
        lambda_sig=float("nan"),
        lambda_bg=float("nan"),
        gain_A=point.gain if point.receiver != "pc" else None,
        mse_analytical=None,
        mse_linear_analytical=None,
        mse_mc=None,
        mse_stderr=None,
        ber_lmmse=None,
        ber_lmmse_nc=None,
        ber_ml=None,
        trials=point.trials if (point.run_mc or point.detectors) else None,
        seed=point.seed,
        regularized_flag=False,
    )
    try:
        phys = PhysicalConfig(
            transmit_power_dbw=point.power_dbw,
            gain=point.gain,
            receiver_kind=ReceiverKind(point.receiver),
            **dict(point.physics),
        )
        channel = derive_channel_params(phys, point.k, point.modulation)
        record.lambda_sig = channel.signal_means[0]
        record.lambda_bg = channel.background_mean
        cfg = ExperimentConfig(
            channel=channel,
            modulation=point.modulation,
            augment=point.augment,
            trials=point.trials,
            seed=point.seed,
            ml_terms=point.ml_terms,
        )
        blocks = assemble_blocks(cfg)
        mse_block, mse_linear, regularized = _mse_report(blocks)
        record.mse_analytical = mse_block
        record.mse_linear_analytical = mse_linear
        record.regularized_flag = regularized
        detectors = point.detectors
        if not point.augment.augmented:
            # conventional points have no augmented combiner; skip that detector
            detectors = detectors - {"lmmse_nc"}
        if detectors:
            result = run_mc_ber(cfg, detectors)
        elif point.run_mc:
            result = run_mc_mse(cfg)
        else:
            result = None
        if result is not None:
            record.mse_mc = result.mse
            record.mse_stderr = result.mse_stderr
            record.ber_lmmse = result.ber_lmmse
            record.ber_lmmse_nc = result.ber_lmmse_nc
            record.ber_ml = result.ber_ml
            record.regularized_flag = record.regularized_flag or result.regularization_flag
    except (ConditioningError, MomentOrderError, ValueError) as exc:
        record.error = f"{type(exc).__name__}: {exc}"
    return record


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_csv(records, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for record in records:
            writer.writerow([_format_cell(getattr(record, name)) for name in CSV_FIELDS])


def run_sweep(sections, out_csv: str, overrides: dict | None = None, workers: int = 1) -> int:
    """Evaluate all sections, write the CSV, and return the exit code."""
    points = []
    for section in sections:
        points.extend(expand_points(section, overrides))
    if not points:
        raise ConfigError("sweep expands to zero points")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(evaluate_point, points))
    else:
        records = [evaluate_point(p) for p in points]
    write_csv(records, out_csv)
    failed = [r for r in records if r.error]
    for r in failed:
        print(f"point failed: {r.receiver_kind} {r.modulation}{r.M} K={r.K} "
              f"nl={r.m},{r.n} P={r.power_dbw} dBW: {r.error}", file=sys.stderr)
    return EXIT_PARTIAL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# plotting

_MSE_COLUMNS = ["mse_analytical", "mse_linear_analytical"]
_BER_COLUMNS = ["ber_lmmse", "ber_lmmse_nc", "ber_ml"]
_GROUP_COLUMNS = ["receiver_kind", "modulation", "M", "K", "m", "n", "gain_A"]


def _read_records(csv_path):
    """Parse a sweep CSV; failures report the byte offset of the bad line."""
    with open(csv_path, "rb") as fh:
        raw = fh.read()
    lines = raw.decode("utf-8").splitlines(keepends=True)
    if not lines:
        raise ConfigError(f"{csv_path}: empty file")
    offset = 0
    header = next(csv.reader([lines[0]]))
    if header != CSV_FIELDS:
        raise ConfigError(f"{csv_path}: unexpected header at byte 0: {header[:3]}...")
    offset += len(lines[0].encode("utf-8"))
    rows = []
    numeric = {"M", "K", "m", "power_dbw", "lambda_sig", "lambda_bg", "gain_A", "n",
               "mse_analytical", "mse_linear_analytical", "mse_mc", "mse_stderr",
               "ber_lmmse", "ber_lmmse_nc", "ber_ml", "trials", "seed"}
    for line in lines[1:]:
        stripped = line.strip()
        if stripped:
            cells = next(csv.reader([line]))
            if len(cells) != len(CSV_FIELDS):
                raise ConfigError(
                    f"{csv_path}: malformed row at byte offset {offset}: "
                    f"expected {len(CSV_FIELDS)} fields, got {len(cells)}")
            row = dict(zip(CSV_FIELDS, cells))
            for key in numeric:
                text = row[key]
                if text == "":
                    row[key] = None
                else:
                    try:
                        row[key] = float(text)
                    except ValueError:
                        raise ConfigError(
                            f"{csv_path}: malformed value {text!r} for {key} "
                            f"at byte offset {offset}") from None
            rows.append(row)
        offset += len(line.encode("utf-8"))
    return rows


def _plot_spec_columns(spec: str):
    spec = spec.strip()
    x_col = None
    if ":" in spec:
        spec, _, option = spec.partition(":")
        if option.startswith("x="):
            x_col = option[2:]
        else:
            raise ConfigError(f"unknown plot option {option!r}")
    spec = spec.strip().lower()
    if spec == "mse":
        return _MSE_COLUMNS, ["mse_mc"], x_col
    if spec == "ber":
        return _BER_COLUMNS, [], x_col
    if spec in CSV_FIELDS:
        return [spec], [], x_col
    raise ConfigError(f"unknown column {spec!r}; expected 'mse', 'ber', or a CSV column name")


def emit_plot(csv_path, spec: str, out_path) -> list:
    """Render log-scale curves from a sweep CSV; returns the series labels."""
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "photonrx"
    import matplotlib.pyplot as plt

    line_columns, marker_columns, x_col = _plot_spec_columns(spec)
    rows = _read_records(csv_path)
    if not rows:
        raise ConfigError(f"{csv_path}: no data rows")
    if x_col is None:
        powers = {row["power_dbw"] for row in rows}
        gains = {row["gain_A"] for row in rows}
        x_col = "gain_A" if len(powers) == 1 and len(gains) > 1 else "power_dbw"
    if x_col not in CSV_FIELDS:
        raise ConfigError(f"unknown column {x_col!r}")

    groups: dict = {}
    for row in rows:
        key = tuple(row[c] for c in _GROUP_COLUMNS)
        groups.setdefault(key, []).append(row)

    fig, ax = plt.subplots(figsize=(7.0, 5.0))
    labels = []
    for key in sorted(groups, key=lambda k: tuple(str(v) for v in k)):
        group = sorted(groups[key], key=lambda r: (r[x_col] is None, r[x_col]))
        tag = _series_tag(dict(zip(_GROUP_COLUMNS, key)))
        for column, style in list(zip(line_columns, ["-", "--", ":"])) + [
            (c, "") for c in marker_columns
        ]:
            xs = [r[x_col] for r in group if r[column] is not None and r[column] > 0]
            ys = [r[column] for r in group if r[column] is not None and r[column] > 0]
            if not xs:
                continue
            label = f"{tag} {column}"
            if style:
                ax.semilogy(xs, ys, style, label=label)
            else:
                ax.semilogy(xs, ys, "o", markersize=4, label=label)
            labels.append(label)
    if not labels:
        raise ConfigError(f"{csv_path}: no plottable values for spec {spec!r}")
    ax.set_xlabel("gain A" if x_col == "gain_A" else "transmit power (dBW)")
    ax.set_ylabel(", ".join(line_columns + marker_columns))
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, format=str(out_path).rsplit(".", 1)[-1], metadata={"Date": None})
    plt.close(fig)
    return labels


def _series_tag(group: dict) -> str:
    mod = group["modulation"]
    mod_txt = "ook" if mod == "ook" else f"ppm{group['M']:g}"
    nl = f"({group['m']:g})" if group["n"] is None else f"({group['m']:g},{group['n']:g})"
    tag = f"{group['receiver_kind']} {mod_txt} K={group['K']:g} {nl}"
    if group["gain_A"] is not None:
        tag += f" A={group['gain_A']:g}"
    return tag


# ---------------------------------------------------------------------------
# presets

PRESETS = {
    # MSE vs power for the factor combinations, with Monte-Carlo validation.
    "fig1a": """
receiver = pc
mod = ook
k = 3
nl = 1
nl = 2
nl = 3
nl = 1,2
nl = 1,3
nl = 2,3
power_dbw = -20:20:5
mc = on
trials = 100000
""",
    # MSE vs power for receiver counts 1..4 (analytical only; the
    # mse_linear_analytical column carries the no-conversion curve).
    "fig1b": """
receiver = pc
mod = ook
k = 1
k = 2
k = 3
k = 4
nl = 1,2
power_dbw = -20:20:1
mc = off
""",
    # MSE vs power for the three receiver types.
    "fig2a": """
receiver = pc
receiver = pmt
receiver = apd
mod = ook
k = 3
nl = 1,2
gain = 100
power_dbw = -20:20:1
mc = off
""",
    # MSE vs power for OOK and M-PPM.
    "fig2b": """
receiver = pc
mod = ook
mod = ppm2
mod = ppm4
mod = ppm8
k = 3
nl = 1,2
power_dbw = -20:20:1
mc = off
""",
    # BER vs power: ML vs combiners, photon-counting receivers.
    "fig3a": """
receiver = pc
mod = ook
k = 1
k = 2
nl = 1,2
power_dbw = -10:6:2
mc = off
detectors = lmmse,lmmse_nc,ml
trials = 100000
""",
    # BER vs gain for PMT (1 dBW) and APD (8 dBW).
    "fig3b": """
receiver = pmt
mod = ook
k = 3
nl = 1,2
gain = 50:500:50
power_dbw = 1
mc = off
detectors = lmmse,lmmse_nc,ml
trials = 100000
---
receiver = apd
mod = ook
k = 3
nl = 1,2
gain = 50:500:50
power_dbw = 8
mc = off
detectors = lmmse,lmmse_nc,ml
trials = 100000
""",
}

_PRESET_PLOT_SPEC = {
    "fig1a": "mse",
    "fig1b": "mse",
    "fig2a": "mse",
    "fig2b": "mse",
    "fig3a": "ber",
    "fig3b": "ber:x=gain_A",
}


# ---------------------------------------------------------------------------
# entry point

def _add_override_args(parser):
    parser.add_argument("--trials", type=int, default=None, help="Monte-Carlo trials per point")
    parser.add_argument("--seed", type=int, default=None, help="base RNG seed")
    parser.add_argument("--ml-terms", type=int, default=None, help="ML mixture truncation (default 50)")
    parser.add_argument("--receiver", action="append", choices=["pc", "pmt", "apd"],
                        help="receiver kind axis override (repeatable)")
    parser.add_argument("--mod", action="append", metavar="ook|ppm<M>",
                        help="modulation axis override (repeatable)")
    parser.add_argument("--nl", action="append", metavar="m[,n]",
                        help="power-factor axis override (repeatable)")
    parser.add_argument("--k", action="append", type=int, help="receiver-count axis override")
    parser.add_argument("--power-dbw", action="append", metavar="a:b:step|value",
                        help="transmit power axis override")
    parser.add_argument("--gain", action="append", metavar="a:b:step|value",
                        help="detector gain axis override")
    parser.add_argument("--workers", type=int, default=1, help="worker threads for sweep points")


def _collect_overrides(args) -> dict:
    overrides = {
        "trials": args.trials,
        "seed": args.seed,
        "ml_terms": args.ml_terms,
        "receiver": args.receiver,
        "mod": args.mod,
        "nl": args.nl,
        "k": args.k,
    }
    expanded = {}
    for key, raw in (("power_dbw", args.power_dbw), ("gain", args.gain)):
        if raw is None:
            continue
        values = []
        for item in raw:
            values.extend(_split_axis_value(key, str(item), "<cli>", 0))
        expanded[key] = values
    overrides.update(expanded)
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photonrx",
        description="SIMO optical receiver sweeps: analytical and Monte-Carlo MSE/BER",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sweep = sub.add_parser("sweep", help="run a sweep from a config file")
    p_sweep.add_argument("config", help="path to a flat key = value config file")
    p_sweep.add_argument("--out", default="sweep.csv", help="output CSV path")
    p_sweep.add_argument("--plot", default=None, metavar="SPEC",
                         help="also render a plot (spec: mse, ber, or a column name)")
    _add_override_args(p_sweep)

    p_fig = sub.add_parser("figure", help="run a named preset sweep and plot it")
    p_fig.add_argument("preset", choices=sorted(PRESETS))
    p_fig.add_argument("--out", default=None, help="output basename (default: preset name)")
    p_fig.add_argument("--no-plot", action="store_true", help="skip the plot file")
    _add_override_args(p_fig)

    p_plot = sub.add_parser("plot", help="plot an existing sweep CSV")
    p_plot.add_argument("csv", help="sweep CSV path")
    p_plot.add_argument("spec", help="plot spec: mse, ber, a column name; optional :x=<col>")
    p_plot.add_argument("--out", default=None, help="output file (default: <csv>.svg)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "sweep":
            try:
                with open(args.config, "r", encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config {args.config!r}: {exc}") from None
            sections = parse_config(text, source=args.config)
            code = run_sweep(sections, args.out, _collect_overrides(args), workers=args.workers)
            print(f"wrote {args.out}")
            if args.plot:
                plot_path = args.out.rsplit(".", 1)[0] + ".svg"
                emit_plot(args.out, args.plot, plot_path)
                print(f"wrote {plot_path}")
            return code
        if args.command == "figure":
            base = args.out or args.preset
            out_csv = base if base.endswith(".csv") else base + ".csv"
            sections = parse_config(PRESETS[args.preset], source=f"<preset {args.preset}>")
            code = run_sweep(sections, out_csv, _collect_overrides(args), workers=args.workers)
            print(f"wrote {out_csv}")
            if not args.no_plot:
                plot_path = out_csv.rsplit(".", 1)[0] + ".svg"
                emit_plot(out_csv, _PRESET_PLOT_SPEC[args.preset], plot_path)
                print(f"wrote {plot_path}")
            return code
        if args.command == "plot":
            out = args.out or (args.csv.rsplit(".", 1)[0] + ".svg")
            emit_plot(args.csv, args.spec, out)
            print(f"wrote {out}")
            return EXIT_OK
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
