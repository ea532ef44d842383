"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical
failure. Settings resolve as flags > ``--config`` file entries > defaults.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings

import numpy as np

from . import data, fusion, metrics, plda, scoring, synth, transforms
from .errors import DataError, NumericalError

log = logging.getLogger("svbackend")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _fraction(s):
    v = float(s)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1], got {s}")
    return v


def _unit(s):
    v = float(s)
    if not 0 <= v <= 1:
        raise argparse.ArgumentTypeError(f"expected a value in [0, 1], got {s}")
    return v


def _prob(s):
    v = float(s)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {s}")
    return v


def _nonneg(s):
    v = float(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative value, got {s}")
    return v


def _prob_list(s):
    try:
        return [_prob(v) for v in str(s).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad probability list {s!r}") from None


# dests holding input files / output files, checked before any compute
INPUTS = ("input", "lda", "mean_from", "model", "embeddings", "enroll", "trials", "key",
          "cohort", "indomain")
OUTPUTS = ("out", "save_model", "trials_out", "key_out", "enroll_out")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    g.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1,
                   help="worker threads for trial-parallel stages")
    g.add_argument("--config", help="key=value file supplying defaults for any flag")
    g.add_argument("--output-format", choices=("text", "tsv"), default="text")
    g.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="svbackend", description="Speaker-verification back-end toolkit.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def cmd(name, help):
        return sub.add_parser(name, help=help, parents=[common], description=help)

    def emb_format(sp):
        sp.add_argument("--format", choices=("binary", "text"), default="binary",
                        help="output embedding format")

    sp = cmd("gen", "generate a synthetic labeled embedding set")
    sp.add_argument("--dim", type=_positive_int)
    sp.add_argument("--n-speakers", type=_positive_int)
    sp.add_argument("--utts-per-speaker", type=_positive_int)
    sp.add_argument("--between", default="iso:1", help="diag:v1,..|iso:v|matrix file")
    sp.add_argument("--within", default="iso:1", help="diag:v1,..|iso:v|matrix file")
    sp.add_argument("--mean", default="zero", help="zero|const:v|v1,v2,...")
    sp.add_argument("--prefix", default="spk", help="speaker id prefix")
    sp.add_argument("--out")
    sp.add_argument("--trials-out", help="also write a trial list")
    sp.add_argument("--key-out", help="also write the trial key")
    sp.add_argument("--enroll-out", help="also write the enrollment map")
    sp.add_argument("--enroll-utts", type=_positive_int, default=1)
    sp.add_argument("--nontargets", type=_positive_int, default=10, help="nontarget trials per model")
    emb_format(sp)

    sp = cmd("train-lda", "fit an LDA projection")
    sp.add_argument("--input")
    sp.add_argument("--dim", type=_positive_int, default=150, help="output dimension (default 150)")
    sp.add_argument("--ridge", type=_nonneg, default=None,
                    help="within-class ridge (default 1e-6 * trace(S_w) / dim)")
    sp.add_argument("--out")

    sp = cmd("transform", "apply LDA and/or length normalization")
    sp.add_argument("--input")
    sp.add_argument("--lda")
    sp.add_argument("--mean-from", help="center with the mean of this embedding set instead")
    sp.add_argument("--length-norm", action="store_true")
    sp.add_argument("--out")
    emb_format(sp)

    sp = cmd("train-plda", "train a two-covariance PLDA model by EM")
    sp.add_argument("--input")
    sp.add_argument("--iters", type=_positive_int, default=20)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--out")

    sp = cmd("adapt-plda", "adapt a PLDA model to unlabeled in-domain data")
    sp.add_argument("--model")
    sp.add_argument("--indomain", "--input", dest="indomain")
    sp.add_argument("--alpha", type=_unit, default=0.5)
    sp.add_argument("--out")

    def kernel_args(sp):
        sp.add_argument("--kernel", choices=("plda", "cosine"), default="plda")
        sp.add_argument("--model", help="PLDA model (plda kernel)")
        sp.add_argument("--embeddings")
        sp.add_argument("--enroll", help="enrollment map; default: enroll ids are utterance ids")

    sp = cmd("score", "score a trial list")
    kernel_args(sp)
    sp.add_argument("--trials")
    sp.add_argument("--out")

    sp = cmd("snorm", "adaptive s-norm of raw scores against a cohort")
    kernel_args(sp)
    sp.add_argument("--scores")
    sp.add_argument("--cohort")
    sp.add_argument("--top-fraction", type=_fraction, default=0.30)
    sp.add_argument("--out")

    for name, help in (("calibrate", "train/apply single-system affine calibration"),
                       ("fuse", "train/apply linear score fusion")):
        sp = cmd(name, help)
        sp.add_argument("--scores", action="append", default=None,
                        help="training score file (repeat per system for fuse)")
        sp.add_argument("--key")
        sp.add_argument("--prior", type=_prob, default=0.05, help="effective prior (default 0.05)")
        sp.add_argument("--ridge", type=_nonneg, default=0.0)
        sp.add_argument("--model", help="load this calibration model instead of training")
        sp.add_argument("--save-model")
        sp.add_argument("--apply", action="append", default=None,
                        help="score files to transform (default: the --scores files)")
        sp.add_argument("--manual-offset", type=float, default=0.0)
        sp.add_argument("--out")

    sp = cmd("evaluate", "EER / minDCF / actDCF report")
    sp.add_argument("--scores", action="append", default=None, help="[NAME=]PATH, repeatable")
    sp.add_argument("--key")
    sp.add_argument("--p-target", type=_prob_list, default=[0.01, 0.005],
                    help="comma-separated target priors averaged into the DCFs")
    sp.add_argument("--c-miss", type=float, default=1.0)
    sp.add_argument("--c-fa", type=float, default=1.0)
    sp.add_argument("--uncalibrated", action="append", default=[],
                    help="system name whose actDCF is reported as '-'")
    sp.add_argument("--out")

    sp = cmd("det", "export DET operating points")
    sp.add_argument("--scores")
    sp.add_argument("--key")
    sp.add_argument("--out")

    sp = cmd("bench", "scoring throughput benchmark")
    sp.add_argument("--model", help="PLDA model; default: synthetic model of --dim")
    sp.add_argument("--dim", type=_positive_int, default=150)
    sp.add_argument("--trials", dest="n_trials", type=int, default=100_000)
    sp.add_argument("--utts", type=_positive_int, default=2000, help="enrollment + test utterances")
    sp.add_argument("--cohort-size", type=_positive_int, default=1000)
    sp.add_argument("--top-fraction", type=_fraction, default=0.30)
    return p, sub


# ---------------------------------------------------------------------------
# helpers


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, [])]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"svbackend {args.command}: missing required option(s): {flags}")


def _check_paths(args):
    for dest in INPUTS:
        val = getattr(args, dest, None)
        if isinstance(val, str) and not os.path.isfile(val):
            raise DataError(f"--{dest.replace('_', '-')}: no such file {val!r}")
    for dest in ("scores", "apply"):
        vals = getattr(args, dest, None) or []
        for val in [vals] if isinstance(vals, str) else vals:
            path = val.split("=", 1)[1] if "=" in val and not os.path.isfile(val) else val
            if not os.path.isfile(path):
                raise DataError(f"--{dest}: no such file {path!r}")
    for dest in OUTPUTS:
        val = getattr(args, dest, None)
        if isinstance(val, str) and val != "-":
            parent = os.path.dirname(os.path.abspath(val))
            if not os.path.isdir(parent):
                raise DataError(f"--{dest.replace('_', '-')}: directory {parent!r} does not exist")


def _read_emb(path):
    return data.read_embeddings(path, data.guess_format(path))


def _write_text_out(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)


def _emit_scores(scores, path):
    if path in (None, "-"):
        for e, t, s in zip(scores.enroll, scores.test, scores.scores):
            sys.stdout.write(f"{e}\t{t}\t{s:.17g}\n")
    else:
        data.write_scores(scores, path)


def _kernel(args):
    if args.kernel == "cosine":
        return scoring.CosineKernel()
    _need(args, "model")
    return plda.PldaModel.load(args.model).kernel


def _enrollment(args):
    return data.read_enrollment(args.enroll) if args.enroll else None


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args):
    _need(args, "dim", "n_speakers", "utts_per_speaker", "out")
    base = os.path.dirname(os.path.abspath(args.config)) if args.config else None
    cfg = synth.config_from_mapping({
        "dim": args.dim, "n_speakers": args.n_speakers, "utts_per_speaker": args.utts_per_speaker,
        "between": args.between, "within": args.within, "mean": args.mean,
        "seed": args.seed, "prefix": args.prefix}, base)
    eset = synth.generate(cfg)
    data.write_embeddings(eset, args.out, args.format)
    if args.trials_out or args.key_out or args.enroll_out:
        enroll, trials, key = synth.make_trials(eset, args.enroll_utts, args.nontargets, args.seed)
        if args.trials_out:
            data.write_trials(trials, args.trials_out)
        if args.key_out:
            data.write_key(key, args.key_out)
        if args.enroll_out:
            data.write_enrollment(enroll, args.enroll_out)
    log.info("wrote %d embeddings of dim %d", len(eset), eset.dim)


def cmd_train_lda(args):
    _need(args, "input", "out")
    t = transforms.fit_lda(_read_emb(args.input), args.dim, args.ridge)
    t.save(args.out)


def cmd_transform(args):
    _need(args, "input", "out")
    eset = _read_emb(args.input)
    if args.lda:
        mean = _read_emb(args.mean_from).vectors.mean(axis=0) if args.mean_from else None
        eset = transforms.apply_lda(transforms.LdaTransform.load(args.lda), eset, mean)
    elif args.mean_from:
        raise UsageError("--mean-from requires --lda")
    if args.length_norm:
        eset = transforms.length_normalize(eset)
    data.write_embeddings(eset, args.out, args.format)


def cmd_train_plda(args):
    _need(args, "input", "out")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = plda.train_plda(_read_emb(args.input), args.iters, args.tol)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    log.info("EM log-likelihood trace: %s", model.loglik)
    model.save(args.out)


def cmd_adapt_plda(args):
    _need(args, "model", "indomain", "out")
    model = plda.adapt_plda(plda.PldaModel.load(args.model), _read_emb(args.indomain), args.alpha)
    model.save(args.out)


def cmd_score(args):
    _need(args, "embeddings", "trials")
    kernel = _kernel(args)
    scores = scoring.score_trials(kernel, _read_emb(args.embeddings), _enrollment(args),
                                  data.read_trials(args.trials), args.threads)
    _emit_scores(scores, args.out)


def cmd_snorm(args):
    _need(args, "scores", "embeddings", "cohort")
    kernel = _kernel(args)
    raw = data.read_scores(args.scores)
    emb = _read_emb(args.embeddings)
    enrollment = _enrollment(args) or data.EnrollmentMap.identity(raw.enroll)
    used = data.EnrollmentMap({m: enrollment[m] for m in dict.fromkeys(raw.enroll)
                               if m in enrollment.models})
    e_coh, t_coh = scoring.build_cohort_scores(emb, _read_emb(args.cohort), kernel, used, raw.test)
    _emit_scores(scoring.adaptive_snorm(raw, e_coh, t_coh, args.top_fraction), args.out)


def cmd_calibrate(args):
    _calibrate_or_fuse(args, single=True)


def cmd_fuse(args):
    _calibrate_or_fuse(args, single=False)


def _calibrate_or_fuse(args, single):
    if args.model:
        model = fusion.CalibrationModel.load(args.model)
    else:
        _need(args, "scores", "key")
        if single and len(args.scores) != 1:
            raise UsageError("calibrate takes exactly one --scores file; use fuse for several")
        train = [data.read_scores(p) for p in args.scores]
        model = fusion.train_fusion(train, data.read_key(args.key), args.prior, args.ridge)
        log.info("weights=%s offset=%r", model.weights.tolist(), model.offset)
    if args.save_model:
        model.save(args.save_model)
    targets = args.apply or args.scores
    if targets and (args.out or not args.save_model):
        fused = fusion.apply_fusion(model, [data.read_scores(p) for p in targets], args.manual_offset)
        _emit_scores(fused, args.out)


def _named(arg):
    if "=" in arg and not os.path.isfile(arg):
        name, path = arg.split("=", 1)
    else:
        path = arg
        name = os.path.splitext(os.path.basename(arg))[0]
    return name, path


def cmd_evaluate(args):
    _need(args, "scores", "key")
    key = data.read_key(args.key)
    params = [metrics.DcfParams(p, args.c_miss, args.c_fa) for p in args.p_target]
    if not params:
        raise UsageError("--p-target needs at least one value")
    rows = []
    for arg in args.scores:
        name, path = _named(arg)
        m = metrics.evaluate(data.read_scores(path), key, params)
        if name in args.uncalibrated:
            m["act_dcf"] = None
        rows.append((name, m))
    _write_text_out(metrics.format_report(rows, tsv=args.output_format == "tsv"), args.out)


def cmd_det(args):
    _need(args, "scores", "key")
    prof = metrics.error_profile(data.read_scores(args.scores), data.read_key(args.key))
    lines = ["threshold\tp_miss\tp_fa"]
    for thr, (pm, pf) in zip(prof.thresholds, metrics.det_points(prof)):
        lines.append(f"{thr:.17g}\t{pm:.17g}\t{pf:.17g}")
    _write_text_out("\n".join(lines) + "\n", args.out)


def cmd_bench(args):
    from .bench import run_bench, format_bench
    model = plda.PldaModel.load(args.model) if args.model else None
    rows, invariant = run_bench(model, args.dim, args.utts, args.n_trials, args.cohort_size,
                                args.threads, args.seed, args.top_fraction)
    tsv = args.output_format == "tsv"
    note = ("# throughput only: a real-time factor needs audio durations, "
            "which lie outside the embedding-level boundary")
    if tsv:
        print(note, file=sys.stderr)
    else:
        print(note)
    sys.stdout.write(format_bench(rows, tsv))
    msg = f"thread-count invariant scores (1 vs {max(2, args.threads)} threads): {'yes' if invariant else 'NO'}"
    print(msg, file=sys.stderr if tsv else sys.stdout)
    if not invariant:
        raise NumericalError("scores differ between thread counts")


COMMANDS = {
    "gen": cmd_gen, "train-lda": cmd_train_lda, "transform": cmd_transform,
    "train-plda": cmd_train_plda, "adapt-plda": cmd_adapt_plda, "score": cmd_score,
    "snorm": cmd_snorm, "calibrate": cmd_calibrate, "fuse": cmd_fuse,
    "evaluate": cmd_evaluate, "det": cmd_det, "bench": cmd_bench,
}


# ---------------------------------------------------------------------------


def _config_defaults(subparser, path):
    """Translate config-file entries into parser defaults for ``subparser``."""
    try:
        entries = synth.read_config_file(path)
    except OSError as exc:
        raise DataError(f"cannot read config file {path!r}: {exc.strerror}") from None
    actions = {a.dest: a for a in subparser._actions}
    out = {}
    for key, value in entries.items():
        if key == "trials" and "n_trials" in actions:
            key = "n_trials"
        if key not in actions or key in ("config", "help"):
            log.debug("config key %r not used by this command", key)
            continue
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            out[key] = value.lower() in ("1", "true", "yes", "on")
        elif isinstance(action, argparse._AppendAction):
            out[key] = [v.strip() for v in value.split(",") if v.strip()]
        else:
            try:
                out[key] = action.type(value) if action.type else value
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config {path}: bad value for {key}: {exc}") from None
            if action.choices and out[key] not in action.choices:
                raise UsageError(f"config {path}: {key} must be one of {sorted(action.choices)}")
    return out


def run(argv=None):
    """Run one subcommand; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, sub = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "svbackend: error: a command is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s", stream=sys.stderr)
        if args.config:
            subparser = sub.choices[args.command]
            subparser.set_defaults(**_config_defaults(subparser, args.config))
            args = parser.parse_args(argv)
        _check_paths(args)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except BrokenPipeError:
        # downstream reader closed early (e.g. `| head`)
        sys.stdout = open(os.devnull, "w")
        return 0
    except (DataError, OSError, UnicodeDecodeError) as exc:
        print(f"svbackend: data error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"svbackend: numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


def main():
    sys.exit(run())
