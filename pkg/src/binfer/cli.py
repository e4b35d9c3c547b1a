"""Command-line front end: ``binfer {fold,infer,estimate,plan,verify,bench,synth}``."""
import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys

import numpy as np

from . import archmodel, bench, formats, kernels, layers, verify
from .bitcore import FixedTensor
from .streaming import max_workers, run_streaming

log = logging.getLogger("binfer")


class CliError(Exception):
    pass


def _model_arg(p, required=False):
    p.add_argument("--model", required=required,
                   help="model JSON (default: shipped reference network 'cifar_bcnn')")


def _load_spec_bn(args, default="cifar_bcnn"):
    if args.model:
        spec, bn = formats.load_model(args.model)
    else:
        with formats.resources.as_file(formats.reference_model_path(default)) as path:
            spec, bn = formats.load_model(path)
    if getattr(args, "bn", None):
        bn.update(formats.load_bn(args.bn, spec))
    return spec, bn


def _freq_hz(mhz):
    if mhz is None or mhz <= 0:
        raise CliError("--freq must be a positive frequency in MHz")
    return mhz * 1e6


# -- fold ---------------------------------------------------------------------

def cmd_fold(args):
    spec, bn = _load_spec_bn(args)
    missing = [i for i in range(len(spec) - 1) if i not in bn]
    if missing:
        i = missing[0]
        raise CliError(f"layer {i} ({spec.layer_name(i)}): no batch-norm parameters to fold")
    thresholds = verify.fold_all(spec, [bn.get(i) for i in range(len(spec))])
    formats.write_thresholds(args.output, thresholds)
    n_const = sum(int(np.sum(t.direction >= 2)) for t in thresholds)
    print(f"wrote {len(thresholds)} threshold layers to {args.output} "
          f"({sum(len(t) for t in thresholds)} channels, {n_const} constant)")


# -- infer --------------------------------------------------------------------

def _load_images(path, spec, count, labels):
    if path.endswith(".npy"):
        arr = np.load(path)
        if arr.ndim == 3:
            arr = arr[None]
        if count is not None:
            if count > len(arr):
                raise CliError(f"{path}: asked for {count} images, file has {len(arr)}")
            arr = arr[:count]
        return [(None, FixedTensor(a)) for a in arr]
    if spec.input_dims != (32, 32, 3):
        raise CliError(f"CIFAR-10 records are 32x32x3; model expects {spec.input_dims} "
                       f"(pass a .npy of fixed-point images)")
    return formats.ingest_cifar10(path, count, labels)


def predictions_csv(rows, labels, n_classes):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "label", "prediction"] + [f"score{k}" for k in range(n_classes)])
    for i, ((pred, scores), lab) in enumerate(zip(rows, labels)):
        w.writerow([i, "" if lab is None else lab, pred] + [repr(float(s)) for s in scores])
    return buf.getvalue()


def cmd_infer(args):
    spec, bn = _load_spec_bn(args)
    try:
        weights = formats.load_weights(args.weights, spec)
        thresholds = formats.read_thresholds(args.thresholds)
    except formats.FormatError as e:
        raise CliError(str(e)) from None
    output_bn = bn.get(len(spec) - 1)
    try:
        layers.check_model(spec, weights, thresholds, output_bn)
    except ValueError as e:
        raise CliError(f"inconsistent artifacts: {e}") from None
    data = _load_images(args.images, spec, args.count, not args.no_labels)
    images = [img for _, img in data]
    labels = [lab for lab, _ in data]
    if args.batch < 1:
        raise CliError("--batch must be >= 1")
    cap = max_workers()
    rows = []
    for start in range(0, len(images), args.batch):
        chunk = images[start:start + args.batch]
        if args.mode == "streaming":
            rows += run_streaming(spec, weights, thresholds, chunk, output_bn, workers=cap)
        else:
            rows += layers.run_batch(spec, weights, thresholds, chunk, output_bn,
                                     workers=min(cap or 1, os.cpu_count() or 1))
    text = predictions_csv(rows, labels, spec.layers[-1].n_filters)
    if args.output:
        with open(args.output, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    if any(lab is not None for lab in labels):
        acc = np.mean([p == lab for (p, _), lab in zip(rows, labels)])
        log.info("accuracy %.4f over %d images", acc, len(rows))
    log.info("%d images classified (%s mode, %s kernels)", len(rows), args.mode,
             kernels.backend_name())


# -- estimate / plan ----------------------------------------------------------

def _parse_int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"expected comma-separated integers, got {text!r}") from None


def _emit_report(report, args):
    print(report.to_text())
    if args.json:
        with open(args.json, "w") as f:
            f.write(report.to_json() + "\n")


def cmd_estimate(args):
    spec, _ = _load_spec_bn(args)
    freq = _freq_hz(args.freq)
    arch = archmodel.ArchParams.load(args.arch) if args.arch else formats.reference_arch()
    measured = _parse_int_list(args.measured) if args.measured else None
    if args.ii is not None:
        arch = archmodel.ArchParams(tuple(archmodel.LayerArch(l.name, l.uf, l.p, args.ii)
                                          for l in arch))
    try:
        report = archmodel.estimate(spec, arch, freq, measured)
    except ValueError as e:
        raise CliError(str(e)) from None
    _emit_report(report, args)


def cmd_plan(args):
    spec, _ = _load_spec_bn(args)
    freq = _freq_hz(args.freq)
    try:
        budget = archmodel.ResourceBudget.parse(args.budget)
    except ValueError as e:
        raise CliError(f"bad --budget: {e}") from None
    if args.calibrate_luts is not None:
        ref = archmodel.ArchParams.load(args.calibrate_arch) if args.calibrate_arch \
            else formats.reference_arch()
        k = archmodel.calibrate_overhead(ref, args.calibrate_luts, budget.lut_per_xnor)
        budget = dataclasses.replace(budget, lut_overhead=k)
        print(f"LUT overhead calibrated to {float(k):.4f} "
              f"({args.calibrate_luts} measured LUTs for the reference arch)")
    try:
        arch, report = archmodel.plan(spec, budget, freq, ii=args.ii,
                                      full_space=args.full_space, include_fc=args.include_fc)
    except archmodel.InfeasibleBudget as e:
        raise CliError(f"infeasible budget: {e}") from None
    _emit_report(report, args)
    if budget.dsps is not None and report.dsps > budget.dsps:
        log.warning("plan uses %d DSPs, budget has %d", report.dsps, budget.dsps)
    if args.output:
        arch.save(args.output)
        print(f"wrote arch params to {args.output}")


# -- verify -------------------------------------------------------------------

def _dump_reproducer(failure, directory):
    os.makedirs(directory, exist_ok=True)
    inst, net = failure["instance"], failure["network"]
    formats.save_model(os.path.join(directory, "model.json"), net, dict(enumerate(inst.bn)))
    formats.write_weights(os.path.join(directory, "weights_packed.bnnw"), net, inst.weights)
    np.savez(os.path.join(directory, "reference.npz"), image=failure["image"].values,
             **{f"w{i}": w for i, w in enumerate(inst.weights_pm1)})


def cmd_verify(args):
    spec = formats.load_model(args.model)[0] if args.model else None
    report = verify.run_verify(args.seed, args.cases, spec, fault=args.inject_fault)
    if report.ok:
        print(f"PASS: {report.passed}/{report.cases} instances bit-identical "
              f"(seed {args.seed}, {kernels.backend_name()} kernels)")
        return
    f = report.failure
    repro = {"seed": f["seed"], "case": f["case"], "mismatch": f["mismatch"],
             "injected_fault": f["injected_fault"],
             "network": formats.spec_to_dict(f["network"])}
    print(f"FAIL: case {f['case']} of seed {f['seed']}: {f['mismatch']['stage']} mismatch in "
          f"layer {f['mismatch']['layer']} ({f['mismatch']['layer_name']})", file=sys.stderr)
    print(json.dumps(repro, indent=1), file=sys.stderr)
    if args.dump:
        _dump_reproducer(f, args.dump)
        print(f"reproducer written to {args.dump}", file=sys.stderr)
    return 1


# -- bench --------------------------------------------------------------------

def cmd_bench(args):
    spec, _ = _load_spec_bn(args)
    backends = kernels.available() if args.backend == "all" else [args.backend]
    for b in backends:
        if b not in kernels.available():
            raise CliError(f"backend {b!r} not available (have {kernels.available()})")
    timings = bench.layer_timings(spec, backends, repeat=args.repeat)
    e2e = bench.end_to_end(spec, args.images, backends)
    print(bench.format_report(timings, e2e))
    print("note: software timings on this CPU; accelerator figures come from `binfer estimate`.")


# -- synth --------------------------------------------------------------------

def cmd_synth(args):
    """Random weights, batch-norm constants, thresholds and images for a model."""
    spec, _ = _load_spec_bn(args)
    rng = np.random.default_rng(args.seed)
    inst = verify.random_instance(rng, spec)
    prefix = args.prefix
    formats.write_weights(prefix + ".bnnw", spec, inst.weights)
    formats.write_thresholds(prefix + ".bnnt", inst.thresholds)
    formats.save_model(prefix + ".model.json", spec, dict(enumerate(inst.bn)))
    if spec.input_dims == (32, 32, 3):
        pix = rng.integers(0, 256, (args.count, 3, 32, 32), dtype=np.uint8)
        formats.write_cifar10(prefix + ".images.bin", pix, rng.integers(0, 10, args.count))
        img = prefix + ".images.bin"
    else:
        imgs = np.stack([verify.random_image(rng, spec).values for _ in range(args.count)])
        np.save(prefix + ".images.npy", imgs.astype(np.int8))
        img = prefix + ".images.npy"
    print(f"wrote {prefix}.model.json {prefix}.bnnw {prefix}.bnnt {img}")


# -- entry point --------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="binfer", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fold", help="fold batch-norm parameters into a threshold file")
    _model_arg(p)
    p.add_argument("--bn", help="separate batch-norm JSON keyed by layer name")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_fold)

    p = sub.add_parser("infer", help="classify images, write predictions CSV")
    _model_arg(p)
    p.add_argument("--bn", help="separate batch-norm JSON (output-layer scores)")
    p.add_argument("--weights", required=True)
    p.add_argument("--thresholds", required=True)
    p.add_argument("--images", required=True, help="CIFAR-10 binary file or .npy")
    p.add_argument("--no-labels", action="store_true", help="records carry no label byte")
    p.add_argument("--count", type=int)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--mode", choices=("sequential", "streaming"), default="sequential")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("estimate", help="cycle/throughput report for given arch params")
    _model_arg(p)
    p.add_argument("--arch", help="arch params JSON (default: shipped reference arch)")
    p.add_argument("--freq", type=float, default=90.0, help="clock in MHz")
    p.add_argument("--ii", type=int, help="override every layer's initiation interval")
    p.add_argument("--measured", help="comma-separated measured cycles per arch layer")
    p.add_argument("--json", help="also write the report as JSON here")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("plan", help="choose per-layer UF/P under a resource budget")
    _model_arg(p)
    p.add_argument("--budget", required=True,
                   help='e.g. "luts=433200,brams=2060,dsps=2800[,overhead=1]"')
    p.add_argument("--freq", type=float, default=90.0, help="clock in MHz")
    p.add_argument("--ii", type=int, default=1)
    p.add_argument("--full-space", action="store_true", help="UF over all divisors of FW*FH*FD")
    p.add_argument("--include-fc", action="store_true", help="also balance FC layers")
    p.add_argument("--calibrate-luts", type=int, metavar="USED",
                   help="set the LUT overhead so the reference arch costs USED LUTs")
    p.add_argument("--calibrate-arch", help="reference arch for --calibrate-luts "
                                            "(default: shipped reference arch)")
    p.add_argument("-o", "--output", help="write chosen arch params JSON")
    p.add_argument("--json", help="also write the report as JSON here")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("verify", help="packed path vs reference on random instances")
    p.add_argument("--model", help="fixed network (default: random toy network per case)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--inject-fault", action="store_true",
                   help="flip one packed weight bit (self-test; must fail)")
    p.add_argument("--dump", help="directory for the reproducer on failure")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="software kernel throughput per backend")
    _model_arg(p)
    p.add_argument("--backend", default="all", help="cython, numpy or all")
    p.add_argument("--images", type=int, default=8)
    p.add_argument("--repeat", type=int, default=3)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="random weights/bn/thresholds/images for a model")
    _model_arg(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--prefix", required=True)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except (CliError, formats.FormatError) as e:
        print(f"binfer {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
