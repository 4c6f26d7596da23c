"""Command-line driver: ``gnssfuel {synth,preprocess,fit,evaluate,engine}``.

Exit codes: 0 success, 2 malformed input, 3 data insufficient for the request.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import engine, estimators, fitting, metrics, synth
from .errors import GnssFuelError, InputError, NoPositives, NoPredictedPositives, NumericOverflow
from .signal_pipeline import (
    DEFAULT_V_EPS_KMH,
    FilterSpec,
    Quantity,
    exclude_stopped,
    read_raw_csv,
    read_synced_csv,
    resample_and_sync,
    series_by_quantity,
    write_raw_csv,
    write_synced_csv,
)


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _emit(text: str, output) -> None:
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def _streams(paths, needed):
    series = series_by_quantity([read_raw_csv(p) for p in paths])
    missing = [q.value for q in needed if q not in series]
    if missing:
        raise InputError(f"missing input stream(s): {', '.join(missing)}")
    return series


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    planted = estimators.load_model(args.model) if args.model else estimators.PbParams(synth.DEFAULT_PB_ALPHA)
    kw = dict(
        duration_s=args.duration,
        profile=args.profile,
        planted_model=planted,
        seed=args.seed,
        idle_flow_lh=args.idle_flow,
        engine_tone=None if args.no_engine_tone else synth.EngineTone(args.tone_hz, args.tone_amplitude),
        grade_pct=args.grade_pct,
        grade_wavelength_m=args.grade_wavelength_m,
        cruise_kmh=args.cruise_kmh,
        speed_variation_kmh=args.speed_variation_kmh,
        highway_accel_ms2=tuple(args.highway_accel),
    )
    spec = synth.TripSpec.noiseless(**kw) if args.noiseless else synth.TripSpec(**kw)
    trip = synth.generate_trip(spec)
    write_raw_csv(out / "v.csv", trip.v_raw)
    write_raw_csv(out / "a.csv", trip.a_raw)
    write_raw_csv(out / "f.csv", trip.f_raw)
    write_synced_csv(out / "truth.csv", trip.truth)
    engine.write_labels_csv(out / "labels.csv", trip.labels)
    estimators.save_model(out / "planted.model", planted)
    print(f"wrote {spec.profile.value} trip of {spec.duration_s:g} s with {len(trip.labels)} stops to {out}")
    return 0


def cmd_preprocess(args) -> int:
    s = _streams(args.input, (Quantity.VELOCITY, Quantity.ACCELERATION, Quantity.FUEL_FLOW))
    ds = resample_and_sync(
        s[Quantity.VELOCITY], s[Quantity.ACCELERATION], s[Quantity.FUEL_FLOW], FilterSpec(args.cutoff_hz)
    )
    write_synced_csv(args.output, ds)
    moving = len(exclude_stopped(ds, args.v_eps))
    print(f"records: {len(ds)} ({ds.t[0]:.1f} s .. {ds.t[-1]:.1f} s)")
    print(f"stopped (v <= {args.v_eps:g} km/h): {len(ds) - moving}; moving: {moving}")
    return 0


def cmd_fit(args) -> int:
    ds = read_synced_csv(args.input)
    if args.split_by_trip:
        # trips are found on the full record, before stops open gaps of their own
        train, test = fitting.split(ds, fitting.SplitSpec(args.train_fraction, args.seed, by_trip=True))
        train, test = exclude_stopped(train, args.v_eps), exclude_stopped(test, args.v_eps)
    else:
        ds = exclude_stopped(ds, args.v_eps)
        train, test = fitting.split(ds, fitting.SplitSpec(args.train_fraction, args.seed))
    if args.kind == "pb":
        report = fitting.fit_pb(train, test)
    elif args.kind == "vtmicro":
        report = fitting.fit_vt_micro(train, test)
    else:
        report = fitting.fit_nn(train, test, args.hidden, args.restarts, args.seed)
    estimators.save_model(args.output, report.params)
    _emit(report.dumps(), args.report)
    return 0


def cmd_evaluate(args) -> int:
    ds = exclude_stopped(read_synced_csv(args.input), args.v_eps)
    rows, failed = [], []
    for path in args.model:
        params = estimators.load_model(path)
        try:
            pred = estimators.predict(params, ds.v, ds.a)
        except NumericOverflow as exc:
            # typically VT-MICRO extrapolating far outside the (v, a) range it was fitted on
            print(f"error: {path}: {exc}; metrics left empty", file=sys.stderr)
            rows.append((Path(path).stem, params.kind, None))
            failed.append(path)
            continue
        rep = metrics.evaluate(pred, ds.f, ds.t, args.tank_l)
        if not rep.has_eot:
            _warn(f"{path}: less than one {args.tank_l:g} l tank of fuel; EOT columns left empty")
        rows.append((Path(path).stem, params.kind, rep))
    _emit(metrics.csv_table(rows), args.output)
    return 3 if failed else 0


def cmd_engine(args) -> int:
    s = _streams(args.input, (Quantity.VELOCITY, Quantity.ACCELERATION))
    labels = engine.read_labels_csv(args.labels) if args.labels else None
    segments = engine.extract_segments(s[Quantity.VELOCITY], s[Quantity.ACCELERATION], labels)
    cspec = engine.ClassifierSpec(args.target_hz, args.band_halfwidth_hz, args.threshold)
    if args.calibrate:
        if not labels:
            raise InputError("--calibrate needs --labels")
        cspec = engine.ClassifierSpec(
            cspec.target_hz, cspec.band_halfwidth_hz, engine.calibrate_threshold(segments, cspec)
        )

    lines = ["start_s,end_s,n_samples,ratio,decision,label"]
    spectra = {}
    for seg in segments:
        spec = engine.segment_spectrum(seg)
        ratio = engine.harmonic_ratio(spec, cspec)
        decision = engine.EngineState.ON if ratio > cspec.threshold else engine.EngineState.OFF
        label = seg.label.value if seg.label else ""
        lines.append(f"{seg.start_time!r},{seg.end_time!r},{seg.a_raw.size},{ratio!r},{decision.value},{label}")
        spectra.setdefault("all", []).append(spec)
        if seg.label:
            spectra.setdefault(seg.label.value, []).append(spec)

    if labels:
        lines.append(f"# threshold = {cspec.threshold!r}")
        try:
            tpr, ppv = engine.evaluate_classifier(segments, cspec)
            lines.append(f"# tpr = {tpr!r}")
            lines.append(f"# ppv = {ppv!r}")
            print(f"segments: {len(segments)}  TPR: {tpr:.3f}  PPV: {ppv:.3f}", file=sys.stderr)
        except (NoPositives, NoPredictedPositives) as exc:
            _warn(str(exc))
    _emit("\n".join(lines) + "\n", args.output)

    if args.spectrum_out:
        if not spectra:
            _warn("no usable stopped segments; no spectrum written")
            return 0
        out = Path(args.spectrum_out)
        engine.write_spectrum_csv(out, engine.average_spectra(spectra["all"]))
        for key in ("on", "off"):
            if key in spectra:
                engine.write_spectrum_csv(
                    out.with_name(f"{out.stem}_{key}{out.suffix}"), engine.average_spectra(spectra[key])
                )
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gnssfuel", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic trip with known ground truth")
    s.add_argument("--output", required=True, help="directory for the generated files")
    s.add_argument("--profile", choices=[x.value for x in synth.Profile], default="mixed_ramp")
    s.add_argument("--duration", type=float, default=1800.0, help="seconds")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--model", help="planted model file (default: built-in PB parameters)")
    s.add_argument("--noiseless", action="store_true", help="no sensor noise, no quantization")
    s.add_argument("--idle-flow", type=float, default=0.8, help="l/h during engine-on stops")
    s.add_argument("--grade-pct", type=float, default=2.0)
    s.add_argument("--grade-wavelength-m", type=float, default=2000.0)
    s.add_argument("--cruise-kmh", type=float, default=110.0)
    s.add_argument("--speed-variation-kmh", type=float, default=20.0)
    s.add_argument(
        "--highway-accel", type=float, nargs=2, default=[0.05, 0.2], metavar=("MIN", "MAX"),
        help="range of mean |a| (m/s^2) for highway speed changes",
    )
    s.add_argument("--tone-hz", type=float, default=26.6)
    s.add_argument("--tone-amplitude", type=float, default=0.02)
    s.add_argument("--no-engine-tone", action="store_true")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="filter and synchronize raw streams to 10 Hz")
    s.add_argument("--input", action="append", required=True, help="raw stream CSV (give all three)")
    s.add_argument("--output", required=True)
    s.add_argument("--cutoff-hz", type=float, default=3.0)
    s.add_argument("--v-eps", type=float, default=DEFAULT_V_EPS_KMH)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("fit", help="fit an estimator on a synchronized dataset")
    s.add_argument("--input", required=True)
    s.add_argument("--kind", choices=["vtmicro", "pb", "nn"], required=True)
    s.add_argument("--output", required=True, help="model file to write")
    s.add_argument("--report", help="fit report file (default: stdout)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--restarts", type=int, default=fitting.DEFAULT_RESTARTS)
    s.add_argument("--hidden", type=int, default=fitting.DEFAULT_HIDDEN)
    s.add_argument("--train-fraction", type=float, default=0.75)
    s.add_argument("--split-by-trip", action="store_true",
                   help="assign whole trips (separated by gaps > 1 s) to train or test")
    s.add_argument("--v-eps", type=float, default=DEFAULT_V_EPS_KMH)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("evaluate", help="compute comparison metrics for model files")
    s.add_argument("--input", required=True)
    s.add_argument("--model", action="append", required=True)
    s.add_argument("--output", help="metrics CSV (default: stdout)")
    s.add_argument("--tank-l", type=float, default=metrics.DEFAULT_TANK_L)
    s.add_argument("--v-eps", type=float, default=DEFAULT_V_EPS_KMH)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("engine", help="classify engine state during stops")
    s.add_argument("--input", action="append", required=True, help="raw velocity and acceleration CSVs")
    s.add_argument("--labels", help="start_s,end_s,label CSV")
    s.add_argument("--output", help="per-segment decisions CSV (default: stdout)")
    s.add_argument("--spectrum-out", help="averaged spectrum CSV (plus _on/_off variants with labels)")
    s.add_argument("--threshold", type=float, default=engine.ClassifierSpec.threshold)
    s.add_argument("--target-hz", type=float, default=engine.ClassifierSpec.target_hz)
    s.add_argument("--band-halfwidth-hz", type=float, default=engine.ClassifierSpec.band_halfwidth_hz)
    s.add_argument("--calibrate", action="store_true", help="pick the threshold from the labels")
    s.set_defaults(func=cmd_engine)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GnssFuelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
