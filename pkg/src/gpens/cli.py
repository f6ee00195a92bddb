"""Command-line interface: fit / eval / ood / kernel-viz / synth.

Every command reads and writes files named on the command line; nothing
touches the network and no environment variables are consulted (BLAS
thread-count variables such as OMP_NUM_THREADS act at the numpy level and
only affect speed).  Reports are canonical JSON -- sorted keys, two-space
indent, floats rounded to 12 significant digits -- and repeated runs with
identical inputs produce byte-identical outputs.  Domain errors print a
single-line JSON object to stderr ({"error": kind, "message": ...}) and
exit 2 for input/validation problems or 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .artifacts import ModelArtifact, read_model, write_model
from .embedstore import (
    SplitMix64,
    TaskBundle,
    load_task_bundle,
    sample_few_shot,
    split_train_val,
)
from .errors import DimensionMismatch, GpensError, ManifestError, TruncatedFile
from .evalmetrics import (
    DEFAULT_HISTOGRAM_BINS,
    accuracy,
    auroc,
    ece,
    predict_labels,
    tace,
    uncertainty_histogram,
    write_histogram_csv,
    write_reliability_csv,
)
from .gpcore import FittedGp, HyperParams, gp_condition, gp_predict
from .hyperopt import MeanVariant, Objective, OptimConfig, RefitOn, fit
from .kernels import BaseKernelKind, deep_kernel_gram

log = logging.getLogger("gpens")

_SIG_DIGITS = 12
_FLOAT_FMT = "%.10g"


@dataclass(frozen=True)
class RunConfig:
    """Echo of a fit invocation, stored in the model artifact verbatim."""

    train_manifest: str
    shots: int
    seed: int
    objective: str
    steps: int
    learning_rate: float
    kernel: str
    scalar_lengthscale: bool
    mean_variant: str
    refit_on: str


def _round_floats(obj):
    if isinstance(obj, float):
        return float(f"{obj:.{_SIG_DIGITS}g}")
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(
        json.dumps(_round_floats(payload), indent=2, sort_keys=True) + "\n", "utf-8"
    )


def _out_dir(args) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _blocks_by_id(bundle: TaskBundle, model_ids, idx: np.ndarray | None) -> list[np.ndarray]:
    feats = []
    for mid in model_ids:
        f = bundle.table(mid).features
        feats.append((f if idx is None else f[idx]).astype(np.float64))
    return feats


def _recondition(model_path: str) -> tuple[ModelArtifact, FittedGp]:
    """Rebuild the conditioned GP from a model file and its train manifest."""
    artifact = read_model(model_path)
    stored = artifact.header.get("train_manifest")
    if not stored:
        raise ManifestError("model header lacks train_manifest", path=model_path)
    candidates = [Path(stored)]
    if not Path(stored).is_absolute():
        candidates.append(Path(model_path).parent / stored)
    manifest = next((p for p in candidates if p.is_file()), None)
    if manifest is None:
        raise TruncatedFile(
            f"training manifest {stored!r} not found (tried "
            f"{[str(p) for p in candidates]}); run from the fit directory",
            path=stored,
        )
    bundle = load_task_bundle(manifest)
    head = None
    if artifact.uses_softmax_mean:
        head = bundle.head
        if head is None:
            raise ManifestError(
                "model uses the zero-shot softmax mean but the training "
                "manifest no longer provides a head",
                path=str(manifest),
            )
    hyper = artifact.hyper_params(head)
    cond = artifact.conditioning_idx
    if cond.size and int(cond.max()) >= bundle.n_samples:
        raise ManifestError(
            "model references training rows outside the manifest", path=model_path
        )
    mean_id = artifact.header["mean_model_id"]
    fitted = gp_condition(
        hyper.kernels,
        hyper.mean,
        _blocks_by_id(bundle, [k.model_id for k in hyper.kernels], cond),
        bundle.table(mean_id).features[cond].astype(np.float64),
        bundle.targets_at(cond),
        hyper.sigma2,
    )
    return artifact, fitted


def _predict_on_manifest(
    artifact: ModelArtifact, fitted: FittedGp, manifest_path: str
) -> tuple[TaskBundle, np.ndarray, np.ndarray]:
    bundle = load_task_bundle(manifest_path)
    rows = np.arange(bundle.n_samples, dtype=np.int64)
    blocks = _blocks_by_id(bundle, [k.model_id for k in fitted.specs], rows)
    mean_block = bundle.table(artifact.header["mean_model_id"]).features.astype(np.float64)
    scores, variance = gp_predict(fitted, blocks, mean_block)
    return bundle, scores, variance


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    bundle = load_task_bundle(args.train_manifest)
    if bundle.labels is None:
        raise ManifestError(
            "fit needs labels: the manifest has no labels_path", path=args.train_manifest
        )
    support = sample_few_shot(bundle, args.shots, args.seed)
    requested = args.objective
    used = requested
    fallback_reason = None
    if requested == "predictive" and args.shots == 1:
        used = "marginal"
        fallback_reason = (
            "1-shot support cannot form a per-class train/val split; "
            "fell back to the marginal objective"
        )
        log.warning(fallback_reason)
    if used == "predictive":
        support = split_train_val(support, args.seed)
    config = OptimConfig(
        objective=Objective(used),
        steps=args.steps,
        learning_rate=args.learning_rate,
        seed=args.seed,
    )
    fitted, trace = fit(
        config,
        support,
        kind=BaseKernelKind(args.kernel),
        scalar_lengthscale=args.scalar_lengthscale,
        mean_variant=MeanVariant(args.mean_variant),
        refit_on=RefitOn(args.refit_on),
    )
    conditioning = (
        "train+val" if used == "predictive" and args.refit_on == "train+val" else "train"
    )
    run_config = RunConfig(
        train_manifest=args.train_manifest,
        shots=args.shots,
        seed=args.seed,
        objective=requested,
        steps=args.steps,
        learning_rate=args.learning_rate,
        kernel=args.kernel,
        scalar_lengthscale=args.scalar_lengthscale,
        mean_variant=args.mean_variant,
        refit_on=args.refit_on,
    )
    hyper = _fitted_hyper(fitted)
    write_model(
        args.out,
        hyper=hyper,
        train_idx=support.train_idx,
        val_idx=support.val_idx,
        train_manifest=args.train_manifest,
        conditioning=conditioning,
        class_count=bundle.num_classes,
        model_ids=list(bundle.model_ids),
        mean_model_id=bundle.mean_model_id,
        class_names=list(bundle.class_names) if bundle.class_names else None,
        objective_requested=requested,
        objective_used=used,
        fallback_reason=fallback_reason,
        config=asdict(run_config),
    )
    trace_path = Path(str(args.out) + ".trace.json")
    _write_json(
        trace_path,
        {
            "fallback_reason": fallback_reason,
            "final_value": trace.final_value,
            "grad_norms": list(trace.grad_norms),
            "learning_rates": list(trace.learning_rates),
            "objective_requested": requested,
            "objective_used": used,
            "steps": config.steps,
            "values": list(trace.values),
        },
    )
    print(
        f"fit: objective={used} final_value={trace.final_value:.6f} "
        f"model={args.out} trace={trace_path}"
    )
    return 0


def _fitted_hyper(fitted: FittedGp) -> HyperParams:
    return HyperParams(
        log_sigma2=math.log(fitted.sigma2), kernels=fitted.specs, mean=fitted.mean
    )


def cmd_eval(args) -> int:
    artifact, fitted = _recondition(args.model)
    bundle, scores, _ = _predict_on_manifest(artifact, fitted, args.manifest)
    if bundle.labels is None:
        raise ManifestError(
            "eval needs labels: the manifest has no labels_path", path=args.manifest
        )
    if bundle.num_classes != artifact.header["class_count"]:
        raise DimensionMismatch(
            f"eval manifest has {bundle.num_classes} classes, "
            f"model was fitted for {artifact.header['class_count']}"
        )
    predicted = predict_labels(scores)
    acc = accuracy(predicted, bundle.labels)
    confidences = np.clip(scores[np.arange(scores.shape[0]), predicted], 0.0, 1.0)
    correct = predicted == bundle.labels
    ece_value, bins = ece(confidences, correct)
    tace_value = tace(np.clip(scores, 0.0, 1.0), bundle.labels)
    out = _out_dir(args)
    _write_json(
        out / "eval_report.json",
        {
            "accuracy": acc,
            "class_count": bundle.num_classes,
            "config": artifact.header["config"],
            "ece": ece_value,
            "eval_manifest": args.manifest,
            "model": args.model,
            "n_eval": bundle.n_samples,
            "reliability_bins": [
                {
                    "lo": b.lo,
                    "hi": b.hi,
                    "count": b.count,
                    "mean_confidence": b.mean_confidence,
                    "accuracy": b.accuracy,
                }
                for b in bins
            ],
            "tace": tace_value,
        },
    )
    write_reliability_csv(out / "reliability_bins.csv", bins)
    print(f"accuracy: {acc * 100.0:.2f}")
    return 0


def cmd_ood(args) -> int:
    artifact, fitted = _recondition(args.model)
    _, _, var_id = _predict_on_manifest(artifact, fitted, args.id_manifest)
    hist_range = (0.0, fitted.prior_variance)
    out = _out_dir(args)
    edges, dens = uncertainty_histogram(
        var_id, bins=args.histogram_bins, value_range=hist_range
    )
    write_histogram_csv(out / "hist_id.csv", edges, dens)
    aurocs: dict[str, float] = {}
    counts: dict[str, int] = {}
    for i, ood_manifest in enumerate(args.ood_manifests):
        name = f"ood{i}_{Path(ood_manifest).parent.name or Path(ood_manifest).stem}"
        _, _, var_ood = _predict_on_manifest(artifact, fitted, ood_manifest)
        aurocs[name] = auroc(var_id, var_ood)
        counts[name] = int(var_ood.size)
        edges, dens = uncertainty_histogram(
            var_ood, bins=args.histogram_bins, value_range=hist_range
        )
        write_histogram_csv(out / f"hist_{name}.csv", edges, dens)
    _write_json(
        out / "ood_report.json",
        {
            "aurocs": aurocs,
            "histogram_bins": args.histogram_bins,
            "histogram_range": list(hist_range),
            "id_manifest": args.id_manifest,
            "model": args.model,
            "n_id": int(var_id.size),
            "n_ood": counts,
            "ood_manifests": list(args.ood_manifests),
        },
    )
    for name in aurocs:
        print(f"auroc[{name}]: {aurocs[name]:.4f}")
    return 0


def cmd_kernel_viz(args) -> int:
    artifact = read_model(args.model)
    specs = artifact.kernel_specs()
    bundle = load_task_bundle(args.manifest)
    count = min(args.samples, bundle.n_samples)
    if count < args.samples:
        log.warning("manifest has only %d rows; clamping sample count", count)
    items = list(range(bundle.n_samples))
    SplitMix64(args.seed, stream=0).shuffle(items)
    sel = items[:count]
    # Order rows by class so same-class blocks sit on the diagonal.
    if bundle.labels is not None:
        sel.sort(key=lambda i: (int(bundle.labels[i]), i))
    else:
        sel.sort()
    sel = np.asarray(sel, dtype=np.int64)
    out = _out_dir(args)

    def write_matrix(path: Path, mat: np.ndarray) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for row in mat:
                fh.write(",".join(_FLOAT_FMT % v for v in row) + "\n")

    total = None
    for spec in specs:
        block = bundle.table(spec.model_id).features[sel].astype(np.float64)
        gram = deep_kernel_gram(spec, block)
        write_matrix(out / f"kernel_model_{spec.model_id}.csv", gram)
        total = gram if total is None else total + gram
    write_matrix(out / "kernel_ensemble.csv", total)
    with open(out / "kernel_samples.csv", "w", encoding="utf-8") as fh:
        fh.write("row,index,sample_id,label\n")
        for r, i in enumerate(sel):
            label = "" if bundle.labels is None else int(bundle.labels[i])
            fh.write(f"{r},{int(i)},{bundle.sample_ids[i]},{label}\n")
    print(f"kernel-viz: wrote {len(specs) + 1} gram matrices over {count} samples to {out}")
    return 0


def cmd_synth(args) -> int:
    from .synth import SynthConfig, write_synthetic_task

    cfg = SynthConfig(
        classes=args.classes,
        dim_a=args.dim_a,
        dim_b=args.dim_b,
        train_per_class=args.train_per_class,
        test_per_class=args.test_per_class,
        ood_samples=args.ood_samples,
        noise=args.noise,
        scale=args.scale,
        seed=args.seed,
    )
    paths = write_synthetic_task(cfg, args.out)
    for name in ("train", "test", "ood"):
        print(f"synth[{name}]: {paths[name]}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpens",
        description="GP ensembles over precomputed embedding files: "
        "low-shot fitting, calibrated evaluation, and OOD scoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="sample a support set and fit hyper-parameters")
    p_fit.add_argument("train_manifest", help="manifest JSON of the training dataset")
    p_fit.add_argument("--out", required=True, help="model file to write")
    p_fit.add_argument("--shots", type=int, required=True, help="support samples per class")
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument(
        "--objective",
        choices=["marginal", "predictive"],
        default="predictive",
        help="objective to maximize (1-shot predictive falls back to marginal)",
    )
    p_fit.add_argument("--steps", type=int, default=100)
    p_fit.add_argument("--learning-rate", type=float, default=0.01)
    p_fit.add_argument("--kernel", choices=[k.value for k in BaseKernelKind], default="rbf")
    p_fit.add_argument(
        "--scalar-lengthscale",
        action="store_true",
        help="tie each model's length scales to a single scalar",
    )
    p_fit.add_argument(
        "--mean-variant",
        choices=[m.value for m in MeanVariant],
        default="zero-shot-softmax",
    )
    p_fit.add_argument(
        "--refit-on",
        choices=[r.value for r in RefitOn],
        default="train+val",
        help="data the final GP conditions on after the predictive objective",
    )
    p_fit.set_defaults(func=cmd_fit)

    p_eval = sub.add_parser("eval", help="score a labeled manifest with a fitted model")
    p_eval.add_argument("model", help="model file from fit")
    p_eval.add_argument("manifest", help="manifest JSON of the evaluation dataset")
    p_eval.add_argument("--out-dir", default=".", help="where reports are written")
    p_eval.set_defaults(func=cmd_eval)

    p_ood = sub.add_parser(
        "ood", help="variance-based OOD scoring against one or more OOD sets"
    )
    p_ood.add_argument("model")
    p_ood.add_argument("--id-manifest", required=True, help="in-distribution manifest")
    p_ood.add_argument(
        "--ood-manifests", nargs="+", required=True, help="out-of-distribution manifests"
    )
    p_ood.add_argument("--histogram-bins", type=int, default=DEFAULT_HISTOGRAM_BINS)
    p_ood.add_argument("--out-dir", default=".")
    p_ood.set_defaults(func=cmd_ood)

    p_viz = sub.add_parser("kernel-viz", help="export tuned gram matrices as CSV")
    p_viz.add_argument("model")
    p_viz.add_argument("manifest")
    p_viz.add_argument("--samples", type=int, default=64)
    p_viz.add_argument("--seed", type=int, default=0)
    p_viz.add_argument("--out-dir", default=".")
    p_viz.set_defaults(func=cmd_kernel_viz)

    p_synth = sub.add_parser("synth", help="write the bundled synthetic benchmark task")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--classes", type=int, default=8)
    p_synth.add_argument("--dim-a", type=int, default=24)
    p_synth.add_argument("--dim-b", type=int, default=16)
    p_synth.add_argument("--train-per-class", type=int, default=24)
    p_synth.add_argument("--test-per-class", type=int, default=40)
    p_synth.add_argument("--ood-samples", type=int, default=160)
    p_synth.add_argument("--noise", type=float, default=0.45)
    p_synth.add_argument("--scale", type=float, default=3.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GpensError as err:
        print(json.dumps(err.payload(), sort_keys=True), file=sys.stderr)
        return err.exit_code
    except Exception as exc:  # pragma: no cover - defensive
        payload = {"error": "InternalError", "message": f"{type(exc).__name__}: {exc}"}
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
