"""Command-line front end: ``facemap <subcommand> ...``.

Every subcommand prints a JSON summary on stdout and logs to stderr.
Failures print ``{"error": ..., "message": ...}`` on stderr and exit with
2 (I/O or file format), 3 (invalid input) or 4 (numerical failure).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import FacemapError, MeshFormatError, NumericalError, ValidationError

log = logging.getLogger("facemap")

CONFIG_ENV = "FACEMAP_CONFIG"
EXIT_IO, EXIT_VALIDATION, EXIT_NUMERICAL = 2, 3, 4


@dataclass
class PipelineConfig:
    """Effective parameters; values come from defaults, then the config file, then flags."""

    resolution: int = 128
    margin_fraction: float = 0.02
    t_multiplier: float = 1.0
    id_frames: int = 5
    max_iters: int = 200
    tol: float = 1e-12
    ridge: float = 1e-3
    gain: float = 1.0
    window: int = 16
    alphabet: int = 29
    source_fps: float = 30.0
    target_fps: float = 60.0
    lambda_cls: float = 1.0
    lambda_rec: float = 10.0
    falloff: float = 20.0
    template: Optional[str] = None
    bank: Optional[str] = None
    weights: Optional[str] = None

    def validate(self) -> None:
        if self.resolution < 2:
            raise ValidationError("resolution must be at least 2")
        if not 0 <= self.margin_fraction <= 0.2:
            raise ValidationError("margin_fraction must lie in [0, 0.2]")
        for name in ("t_multiplier", "tol", "falloff", "source_fps", "target_fps"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        for name in ("id_frames", "max_iters", "alphabet"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        for name in ("ridge", "gain", "lambda_cls", "lambda_rec"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")
        if self.window < 2 or self.window % 2:
            raise ValidationError("window must be an even integer >= 2")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(names))
        if unknown:
            raise ValidationError(f"unknown config keys: {unknown}")
        return cls(**d)


def load_config(path: Optional[str]) -> PipelineConfig:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return PipelineConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except ValueError as exc:
        raise MeshFormatError(f"bad config JSON: {exc}", path) from None
    if not isinstance(doc, dict):
        raise ValidationError("config file must hold a JSON object")
    return PipelineConfig.from_dict(doc)


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands


def cmd_geodesic(args, cfg: PipelineConfig) -> dict:
    from .geodesics import all_pairs_geodesics, build_heat_context, geodesic_from_source, save_dmat
    from .mesh import load_mesh

    mesh = load_mesh(args.mesh)
    ctx = build_heat_context(mesh, cfg.t_multiplier)
    if args.all_pairs:
        D = all_pairs_geodesics(ctx, mesh, threads=args.threads).values
        save_dmat(D, args.out)
        vals = D[~np.eye(len(D), dtype=bool)] if len(D) > 1 else D.ravel()
    else:
        if args.source is None:
            raise ValidationError("give --source INDEX or --all-pairs")
        if not 0 <= args.source < mesh.n_vertices:
            raise ValidationError(f"source index {args.source} out of range [0, {mesh.n_vertices})")
        d = geodesic_from_source(ctx, mesh, args.source)
        with open(args.out, "w") as fh:
            fh.writelines(f"{x!r}\n" for x in d.tolist())
        vals = np.delete(d, args.source)
    return {"n": mesh.n_vertices, "min": float(vals.min()), "max": float(vals.max()), "out": str(args.out)}


def cmd_embed(args, cfg) -> dict:
    from .geodesics import load_dmat
    from .mds import classical_mds_2d, save_embedding

    emb = classical_mds_2d(load_dmat(args.dmat))
    save_embedding(emb, args.out)
    return {"n": emb.n, "eigenvalues": emb.eigenvalues.tolist(), "strain": emb.strain, "out": str(args.out)}


def cmd_atlas(args, cfg) -> dict:
    from .geometry_map import build_atlas, save_atlas
    from .mds import load_embedding
    from .mesh import load_mesh

    atlas = build_atlas(load_embedding(args.embedding), load_mesh(args.mesh), cfg.resolution, cfg.margin_fraction)
    save_atlas(atlas, args.out)
    return {
        "resolution": atlas.resolution,
        "coverage": atlas.coverage,
        "n_foldover": atlas.n_foldover,
        "n_degenerate": atlas.n_degenerate,
        "out": str(args.out),
    }


def cmd_encode(args, cfg) -> dict:
    from .geometry_map import encode, export_png, load_atlas, save_gmap
    from .mesh import load_mesh

    gmap = encode(load_mesh(args.mesh), load_atlas(args.atlas))
    save_gmap(gmap, args.out)
    if args.png:
        export_png(gmap, args.png)
    return {"shape": list(gmap.grid.shape), "masked": int(gmap.mask.sum()), "out": str(args.out)}


def cmd_decode(args, cfg) -> dict:
    from .geometry_map import decode, load_atlas, load_gmap
    from .mesh import save_mesh

    atlas = load_atlas(args.atlas)
    mesh = decode(load_gmap(args.gmap, atlas), atlas)
    if mesh.degenerate:
        raise NumericalError("decoded mesh has degenerate faces")
    save_mesh(mesh, args.out)
    return {"n_vertices": mesh.n_vertices, "out": str(args.out)}


def cmd_fit(args, cfg) -> dict:
    from .mesh import TriangleMesh, load_mesh, save_mesh
    from .morphable import (
        evaluate_model,
        fit_sequence,
        load_model,
        model_vertices,
        read_landmark_frames,
        relative_ridge,
        solve_pose,
    )

    template = args.template or cfg.template
    if template is None:
        raise ValidationError("fit needs --template (a mesh supplying the model's connectivity)")
    faces = load_mesh(template).faces
    model = load_model(args.model, faces)
    if faces.max() >= model.n_vertices:
        raise ValidationError("template connectivity does not match the model's vertex count")
    frames = read_landmark_frames(args.landmarks)
    if not frames:
        raise ValidationError("landmark file holds no frames")
    ridge = 0.0
    if cfg.ridge > 0:
        pose0 = solve_pose(frames[0], model_vertices(model, model.id_init, model.exp_neutral))
        ridge = relative_ridge(frames[0], pose0, model, model.id_init, cfg.ridge)
    fit = fit_sequence(
        frames, model, id_frames=min(cfg.id_frames, len(frames)), max_iters=cfg.max_iters,
        tol=cfg.tol, ridge=ridge, threads=args.threads,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for k, f in enumerate(fit.frames):
        mesh = evaluate_model(model, fit.w_id, f.w_exp)
        if mesh.degenerate:
            raise NumericalError(f"fitted frame {k} has degenerate faces")
        save_mesh(TriangleMesh(mesh.vertices, faces), out / f"frame_{k:04d}.obj")
        records.append({"frame": k, **f.pose.to_dict(), "w_exp": f.w_exp.tolist(), "energy": f.energy,
                        "converged": f.converged})
    doc = {"w_id": fit.w_id.tolist(), "ridge": ridge, "identity_converged": fit.identity_converged,
           "frames": records}
    (out / "poses.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return {"frames": len(records), "converged": fit.converged, "ridge": ridge, "out": str(out)}


def cmd_augment(args, cfg) -> dict:
    from .emotion import augment_emotion, load_bank, load_region_weights, nearest_calm_exemplar
    from .mesh import load_mesh, save_mesh

    bank_path, weights_dir = args.bank or cfg.bank, args.weights or cfg.weights
    if bank_path is None or weights_dir is None:
        raise ValidationError("augment needs a bank manifest and a weights directory (arguments or config)")
    mesh = load_mesh(args.mesh)
    bank = load_bank(bank_path)
    weights = load_region_weights(weights_dir)
    identity, dist = nearest_calm_exemplar(mesh, bank)
    out = augment_emotion(mesh, args.emotion, bank, weights, cfg.gain)
    if out.degenerate:
        raise NumericalError("augmented mesh has degenerate faces; lower the gain")
    save_mesh(out, args.out)
    return {"identity": identity, "distance": dist, "gain": cfg.gain, "out": str(args.out)}


def _sequence_dir(path):
    from .mesh import load_sequence

    d = Path(path)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in (".obj", ".ply"))
    if not files:
        raise ValidationError(f"no .obj or .ply frames in {d}")
    return load_sequence(files)


def cmd_metrics(args, cfg) -> dict:
    from .losses import metrics_report, optional_subset, read_labels

    pred = _sequence_dir(args.pred_dir)
    ref = _sequence_dir(args.ref_dir)
    subset = optional_subset(args.subset)
    if (args.pred_labels is None) != (args.true_labels is None):
        raise ValidationError("give both --pred-labels and --true-labels, or neither")
    pl = read_labels(args.pred_labels) if args.pred_labels else None
    tl = read_labels(args.true_labels) if args.true_labels else None
    return metrics_report(pred, ref, subset, pl, tl)


def cmd_windows(args, cfg) -> dict:
    from .audio import features_to_windows, load_features, save_windows

    feat = load_features(args.features, cfg.source_fps)
    if feat.dim != cfg.alphabet:
        log.warning("feature dimension %d differs from the configured alphabet size %d", feat.dim, cfg.alphabet)
    win = features_to_windows(feat, cfg.target_fps, cfg.window)
    save_windows(win, args.out)
    return {"shape": list(win.tensor.shape), "out": str(args.out)}


def cmd_region_weights(args, cfg) -> dict:
    from .emotion import build_region_weights, save_region_weights
    from .mesh import load_mesh, read_landmarks

    field = build_region_weights(
        load_mesh(args.mesh), read_landmarks(args.upper), read_landmarks(args.lower), cfg.falloff,
        t_multiplier=cfg.t_multiplier,
    )
    save_region_weights(field, args.out_dir)
    return {"upper_support": int(np.count_nonzero(field.upper)),
            "lower_support": int(np.count_nonzero(field.lower)), "out": str(args.out_dir)}


def cmd_make_synthetic(args, cfg) -> dict:
    from . import synthetic
    from .audio import FeatureMatrix, save_features
    from .emotion import build_region_weights, save_region_weights, write_manifest
    from .mesh import TriangleMesh, save_mesh, write_landmarks
    from .morphable import save_model, write_landmark_frames

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    ft = synthetic.face_template()
    save_mesh(ft.mesh, out / "template.obj")
    write_landmarks(ft.mouth, out / "mouth.idx")
    write_landmarks(ft.upper_boundary, out / "upper.idx")
    write_landmarks(ft.lower_boundary, out / "lower.idx")
    save_mesh(synthetic.icosphere(3), out / "icosphere.obj")
    save_mesh(synthetic.grid_mesh(21, 21), out / "grid.obj")

    model, lm = synthetic.bilinear_model(seed=args.seed)
    save_model(model, out / "model.blm")
    save_mesh(TriangleMesh(model.mean().reshape(-1, 3), model.faces), out / "model_template.obj")
    frames, *_ = synthetic.synthetic_sequence(model, lm, n_frames=10, seed=args.seed + 1)
    write_landmark_frames(frames, out / "landmarks.jsonl")

    bank_dir = out / "bank"
    bank_dir.mkdir(exist_ok=True)
    records = []
    for ident, expr, mesh in synthetic.reference_bank(ft, seed=args.seed + 7):
        name = f"{ident}_{expr}.obj"
        save_mesh(TriangleMesh(mesh.vertices, mesh.faces), bank_dir / name)
        records.append((ident, expr, name))
    write_manifest(records, bank_dir / "manifest.json", ft.mesh.landmark_indices)
    save_region_weights(
        build_region_weights(ft.mesh, ft.upper_boundary, ft.lower_boundary, cfg.falloff,
                             t_multiplier=cfg.t_multiplier),
        out / "weights",
    )

    seq_pred, seq_ref = out / "pred", out / "ref"
    seq_pred.mkdir(exist_ok=True)
    seq_ref.mkdir(exist_ok=True)
    for k in range(5):
        ref = synthetic.smooth_deformation(ft.mesh, rng, amplitude=0.01)
        pred = ref.with_vertices(ref.vertices + rng.normal(scale=0.05, size=ref.vertices.shape))
        save_mesh(TriangleMesh(ref.vertices, ref.faces), seq_ref / f"frame_{k:04d}.obj")
        save_mesh(TriangleMesh(pred.vertices, pred.faces), seq_pred / f"frame_{k:04d}.obj")

    feat = FeatureMatrix(rng.random((60, cfg.alphabet)))
    save_features(feat, out / "speech.feat")
    return {"out": str(out), "template_vertices": ft.mesh.n_vertices, "model": list(model.core.shape)}


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(json.dumps({"error": "UsageError", "message": message}) + "\n")
        sys.exit(EXIT_VALIDATION)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    common.add_argument("--dump-config", metavar="PATH", help="write the effective config as JSON")
    common.add_argument("--resolution", type=int)
    common.add_argument("--margin-fraction", type=float)
    common.add_argument("--t-multiplier", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="facemap", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"facemap {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("geodesic", parents=[common], help="heat-method geodesic distances")
    s.add_argument("mesh")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--source", type=int)
    g.add_argument("--all-pairs", action="store_true")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_geodesic)

    s = sub.add_parser("embed", parents=[common], help="classical MDS of a .dmat into the plane")
    s.add_argument("dmat")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("atlas", parents=[common], help="rasterize an embedding into a template atlas")
    s.add_argument("mesh")
    s.add_argument("embedding")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_atlas)

    s = sub.add_parser("encode", parents=[common], help="mesh to geometry map")
    s.add_argument("mesh")
    s.add_argument("atlas")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--png")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", parents=[common], help="geometry map to mesh")
    s.add_argument("gmap")
    s.add_argument("atlas")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("fit", parents=[common], help="bilinear model fit to a landmark sequence")
    s.add_argument("landmarks")
    s.add_argument("model")
    s.add_argument("out_dir")
    s.add_argument("--template", help="mesh supplying the model's face connectivity")
    s.add_argument("--id-frames", type=int)
    s.add_argument("--ridge", type=float, help="relative to the largest normal-equation diagonal")
    s.add_argument("--max-iters", type=int)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("augment", parents=[common], help="emotion displacement transfer")
    s.add_argument("mesh")
    s.add_argument("emotion")
    s.add_argument("bank", nargs="?")
    s.add_argument("weights", nargs="?", help="directory holding upper.wgt and lower.wgt")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--gain", type=float)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("metrics", parents=[common], help="RE / VE / CE between two frame directories")
    s.add_argument("pred_dir")
    s.add_argument("ref_dir")
    s.add_argument("subset", nargs="?", help="vertex index file (default: all vertices)")
    s.add_argument("--pred-labels")
    s.add_argument("--true-labels")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("windows", parents=[common], help="upsample speech features and cut windows")
    s.add_argument("features")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--target-fps", type=float)
    s.add_argument("--source-fps", type=float)
    s.add_argument("--window", type=int)
    s.set_defaults(func=cmd_windows)

    s = sub.add_parser("region-weights", parents=[common], help="geodesic falloff weight fields")
    s.add_argument("mesh")
    s.add_argument("upper", help="index file of upper boundary vertices")
    s.add_argument("lower", help="index file of lower boundary vertices")
    s.add_argument("out_dir")
    s.add_argument("--falloff", type=float)
    s.set_defaults(func=cmd_region_weights)

    s = sub.add_parser("make-synthetic", parents=[common], help="write the synthetic test assets")
    s.add_argument("out_dir")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_synthetic)
    return p


_OVERRIDES = ("resolution", "margin_fraction", "t_multiplier", "id_frames", "ridge", "max_iters", "gain",
              "target_fps", "source_fps", "window", "falloff")


def effective_config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    for name in _OVERRIDES:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    cfg.validate()
    return cfg


def _error(kind: str, exc: BaseException, code: int) -> int:
    doc = {"error": kind, "message": str(exc)}
    path = getattr(exc, "path", None) or getattr(exc, "filename", None)
    if path is not None:
        doc["path"] = str(path)
    sys.stderr.write(json.dumps(doc, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    if args.threads < 1:
        return _error("ValidationError", ValueError("--threads must be at least 1"), EXIT_VALIDATION)
    try:
        from threadpoolctl import threadpool_limits

        cfg = effective_config(args)
        if args.dump_config:
            Path(args.dump_config).write_text(json.dumps(dataclasses.asdict(cfg), indent=1, sort_keys=True) + "\n")
        start = time.perf_counter()
        # BLAS stays single-threaded so that results never depend on --threads
        with threadpool_limits(limits=1):
            summary = args.func(args, cfg)
        summary["wall_time_s"] = round(time.perf_counter() - start, 6)
    except MeshFormatError as exc:
        return _error(type(exc).__name__, exc, EXIT_IO)
    except OSError as exc:
        return _error(type(exc).__name__, exc, EXIT_IO)
    except ValidationError as exc:
        return _error(type(exc).__name__, exc, EXIT_VALIDATION)
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _error(type(exc).__name__, exc, EXIT_NUMERICAL)
    except FacemapError as exc:
        return _error(type(exc).__name__, exc, EXIT_VALIDATION)
    _emit(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
