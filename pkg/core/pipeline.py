"""
Pipeline stages. Each stage reads its inputs from disk and writes its
artifacts atomically; the CLI subcommands and ``run_pipeline`` call the same
functions, so a pipeline run equals the subcommands run in sequence.
"""

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config.settings import Thresholds
from config.state import load_state, save_state
from core.cameras import CloseupMode, closeup_camera, interpolate_cameras
from core.errors import EmptyInput, InputError, MissingFile
from core.fusion import (
    FusionThresholds,
    cloud_from_passes,
    count_maps_from_passes,
    fusion_passes,
    pixel_confidence,
    project_cloud,
)
from core.geometry import Camera
from core.metrics import ConfidenceWeights, image_confidence, psnr, reference_baseline, ssim, weighted_loss
from core.occlusion import suppress
from core.parallel import ordered_map
from core.scene_io import (
    load_dataset,
    read_cameras,
    read_index_png,
    read_manifest,
    read_mask_png,
    read_pfm,
    read_ply,
    read_png,
    write_cameras,
    write_dataset,
    write_index_png,
    write_mask_png,
    write_pfm,
    write_ply,
    write_png,
)
from core.synthetic import (
    DEFAULT_SCENE,
    NoiseSpec,
    load_scene,
    render_analytic,
    render_views,
    scene_from_dict,
    trajectory_cameras,
)
from core.warping import WarpResult, hierarchical_warp, merge_views
from reporting import report

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StageResult:
    stage: str
    summary: str
    outputs: List[str] = field(default_factory=list)


def select_references(count: int, refs: Optional[Sequence[int]] = None) -> List[int]:
    """Reference view indices; the first and last views unless ``refs`` is given."""
    if count < 1:
        raise EmptyInput("dataset has no views")
    if refs is None:
        return sorted({0, count - 1})
    chosen = []
    for index in refs:
        if not 0 <= index < count:
            raise InputError(f"--refs: view index {index} out of range for {count} views")
        if index not in chosen:
            chosen.append(index)
    if not chosen:
        raise InputError("--refs: no reference views given")
    return chosen


def read_targets(path) -> List[Tuple[str, Camera]]:
    targets = read_cameras(path)
    if not targets:
        raise EmptyInput(f"target camera list '{path}' is empty")
    return targets


def baseline_difficulty(baseline: float, hard_baseline: Optional[float]) -> Optional[str]:
    if hard_baseline is None:
        return None
    return "hard" if baseline > hard_baseline else "easy"


# ---------------------------------------------------------------- warp artifacts

def write_warp(out_dir, tid: str, warp: WarpResult, with_mask: bool = False):
    base = os.path.join(out_dir, tid)
    write_png(f"{base}.png", warp.rgb)
    write_pfm(f"{base}_depth.pfm", warp.depth)
    write_mask_png(f"{base}_valid.png", warp.valid)
    write_mask_png(f"{base}_reliable.png", warp.reliable_origin)
    write_mask_png(f"{base}_lowres.png", warp.from_low_res)
    write_index_png(f"{base}_source.png", warp.source_view)
    if with_mask:
        write_mask_png(f"{base}_mask.png", warp.suppressed)


def read_warp(warp_dir, tid: str) -> WarpResult:
    base = os.path.join(warp_dir, tid)
    for suffix in (".png", "_depth.pfm", "_valid.png", "_reliable.png", "_lowres.png", "_source.png"):
        if not os.path.isfile(base + suffix):
            raise MissingFile(tid, base + suffix)
    valid = read_mask_png(f"{base}_valid.png")
    mask_path = f"{base}_mask.png"
    return WarpResult(
        rgb=np.where(valid[..., None], read_png(f"{base}.png"), 0.0),
        depth=np.where(valid, read_pfm(f"{base}_depth.pfm").astype(np.float64), 0.0),
        valid=valid,
        source_view=np.where(valid, read_index_png(f"{base}_source.png"), 0),
        reliable_origin=read_mask_png(f"{base}_reliable.png") & valid,
        from_low_res=read_mask_png(f"{base}_lowres.png") & valid,
        suppressed=read_mask_png(mask_path) & ~valid if os.path.isfile(mask_path) else None,
    )


# ---------------------------------------------------------------- stages

def run_synth(out_dir, scene_path=None, thresholds: Thresholds = Thresholds(), threads: int = 1) -> StageResult:
    """Render a synthetic dataset, two zoomed targets and their ground truth."""
    scene = load_scene(scene_path) if scene_path else scene_from_dict(DEFAULT_SCENE)
    cameras = trajectory_cameras(scene)
    views = render_views(scene, cameras, threads)
    manifest = write_dataset(views, out_dir)

    zoom = thresholds.zoom_range[0]
    firsts = [views[0]] if len(views) == 1 else [views[0], views[-1]]
    targets = [(f"t{k:03d}", closeup_camera(view.camera, CloseupMode.ZOOM, zoom, zoom_range=thresholds.zoom_range))
               for k, view in enumerate(firsts)]
    targets_path = os.path.join(out_dir, "targets.txt")
    write_cameras(targets_path, targets)

    clean = dataclasses.replace(scene, noise=NoiseSpec())
    truth = [render_analytic(clean, camera, len(views) + k, view_id=tid)[0] for k, (tid, camera) in enumerate(targets)]
    write_dataset(truth, os.path.join(out_dir, "truth"))

    return StageResult("synth", f"synth: {len(views)} views, {len(targets)} targets -> {out_dir}",
                       [manifest, targets_path])


def run_warp(manifest, targets_path, out_dir, thresholds: Thresholds = Thresholds(),
             refs: Optional[Sequence[int]] = None, threads: int = 1) -> StageResult:
    views = load_dataset(manifest, threads)
    ref_indices = select_references(len(views), refs)
    targets = read_targets(targets_path)
    ref_cameras = [views[k].camera for k in ref_indices]
    lookup = np.asarray(ref_indices, dtype=np.int64)

    def warp_target(item):
        tid, camera = item
        results = [hierarchical_warp(views[k], camera, thresholds.quantile, thresholds.grad_threshold, view_index=k)
                   for k in ref_indices]
        merged = merge_views(results, ref_cameras, camera)
        # artifacts store manifest indices, not positions in the reference list
        merged = dataclasses.replace(merged, source_view=np.where(merged.valid, lookup[merged.source_view], 0))
        write_warp(out_dir, tid, merged)
        return merged.density

    densities = ordered_map(warp_target, targets, threads)
    return StageResult("warp", f"warp: {len(targets)} targets, mean density {np.mean(densities):.3f} -> {out_dir}")


def run_suppress(warp_dir, targets_path, out_dir, tau_d: float = 0.2, threads: int = 1) -> StageResult:
    targets = read_targets(targets_path)

    def suppress_target(item):
        tid, _ = item
        result, mask = suppress(read_warp(warp_dir, tid), tau_d)
        write_warp(out_dir, tid, result, with_mask=True)
        return int((~mask.keep).sum())

    removed = ordered_map(suppress_target, targets, threads)
    return StageResult("suppress", f"suppress: {len(targets)} targets, {sum(removed)} pixels removed "
                                   f"(tau_d {tau_d}) -> {out_dir}")


def run_fuse(manifest, out_dir, thresholds: Thresholds = Thresholds(), threads: int = 1,
             dedup: bool = False) -> StageResult:
    views = load_dataset(manifest, threads)
    fusion = FusionThresholds.from_thresholds(thresholds)
    passes = fusion_passes(views, fusion, threads)

    for count_map in count_maps_from_passes(views, passes):
        write_pfm(os.path.join(out_dir, "counts", f"{count_map.view_id}_count.pfm"),
                  count_map.counts.astype(np.float32))
    fused = cloud_from_passes(passes, fusion, dedup)
    cloud_path = os.path.join(out_dir, "fused.ply")
    write_ply(fused.cloud, cloud_path)

    support = float(fused.support.mean()) if len(fused) else 0.0
    return StageResult("fuse", f"fuse: {len(views)} views, {len(fused)} points (mean support {support:.1f}) "
                               f"-> {out_dir}", [cloud_path])


def run_project(cloud_path, targets_path, out_dir, threads: int = 1) -> StageResult:
    if not os.path.isfile(cloud_path):
        raise MissingFile("fused cloud", cloud_path)
    cloud = read_ply(cloud_path)
    targets = read_targets(targets_path)

    def project_target(item):
        tid, camera = item
        image = project_cloud(cloud, camera)
        base = os.path.join(out_dir, tid)
        write_png(f"{base}_global.png", image.rgb)
        write_pfm(f"{base}_global_depth.pfm", image.depth)
        write_mask_png(f"{base}_global_valid.png", image.valid)
        return image.density

    densities = ordered_map(project_target, targets, threads)
    return StageResult("project", f"project: {len(cloud)} points into {len(targets)} targets, "
                                  f"mean density {np.mean(densities):.3f} -> {out_dir}")


def run_confidence(manifest, counts_dir, targets_path, out_dir, thresholds: Thresholds = Thresholds(),
                   refs: Optional[Sequence[int]] = None, hard_baseline: Optional[float] = None,
                   threads: int = 1) -> StageResult:
    """Pixel confidences from count maps and image confidences of every view and target."""
    entries = read_manifest(manifest)
    ref_indices = select_references(len(entries), refs)
    ref_poses = [entries[k].camera.pose for k in ref_indices]
    targets = read_targets(targets_path)

    def pixel_weights(entry):
        path = os.path.join(counts_dir, f"{entry.view_id}_count.pfm")
        if not os.path.isfile(path):
            raise MissingFile(entry.view_id, path)
        w_pixel = pixel_confidence(np.rint(read_pfm(path)).astype(np.int64), thresholds.tau_num)
        write_pfm(os.path.join(out_dir, f"{entry.view_id}_wpixel.pfm"), w_pixel.astype(np.float32))
        return float(w_pixel.mean())

    mean_weights = ordered_map(pixel_weights, entries, threads)
    baseline = reference_baseline(ref_poses)
    document = {
        "baseline": baseline,
        "difficulty": baseline_difficulty(baseline, hard_baseline),
        "references": [entries[k].view_id for k in ref_indices],
        "tau_num": thresholds.tau_num,
        "views": {entry.view_id: image_confidence(entry.camera.pose, ref_poses) for entry in entries},
        "targets": {tid: image_confidence(camera.pose, ref_poses) for tid, camera in targets},
    }
    save_state(os.path.join(out_dir, "confidence.json"), document)
    return StageResult("confidence", f"confidence: {len(entries)} views (mean W_pixel {np.mean(mean_weights):.3f}), "
                                     f"{len(targets)} targets -> {out_dir}")


def run_closeup_cams(manifest, out_path, thresholds: Thresholds = Thresholds(), mode: str = "zoom",
                     factor: Optional[float] = None, refs: Optional[Sequence[int]] = None,
                     frames: int = 1) -> StageResult:
    entries = read_manifest(manifest)
    ref_indices = select_references(len(entries), refs)
    mode = CloseupMode(mode)
    if factor is None:
        factor = thresholds.zoom_range[0] if mode is CloseupMode.ZOOM else thresholds.dolly_range[0]

    depth_max = {}
    if mode is CloseupMode.DOLLY:
        views = load_dataset(manifest)
        depth_max = {k: views[k].max_depth for k in ref_indices}

    closeups = [(f"{entries[k].view_id}_{mode.value}",
                 closeup_camera(entries[k].camera, mode, factor, depth_max.get(k), thresholds.zoom_range,
                                thresholds.dolly_range))
                for k in ref_indices]
    if frames > 1 and len(closeups) > 1:
        sequence = interpolate_cameras(closeups[0][1], closeups[-1][1], frames)
        closeups = [(f"close_{k:03d}", camera) for k, camera in enumerate(sequence)]

    write_cameras(out_path, closeups)
    return StageResult("closeup-cams", f"closeup-cams: {len(closeups)} {mode.value} cameras "
                                       f"(factor {factor}) -> {out_path}", [out_path])


def run_metrics(manifest, renders_dir, out_dir, thresholds: Thresholds = Thresholds(),
                confidence_dir=None, hard_baseline: Optional[float] = None) -> StageResult:
    """Compare ``<renders_dir>/<id>.png`` with every ground-truth view of ``manifest``."""
    views = load_dataset(manifest)
    confidence = load_state(os.path.join(confidence_dir, "confidence.json")) if confidence_dir else {}
    image_weights = {**confidence.get("views", {}), **confidence.get("targets", {})}

    rows = []
    for view in views:
        render_path = os.path.join(renders_dir, f"{view.id}.png")
        if not os.path.isfile(render_path):
            logger.warning("No render for %s in %s", view.id, renders_dir)
            continue
        render = read_png(render_path)
        valid_path = os.path.join(renders_dir, f"{view.id}_valid.png")
        coverage = float(read_mask_png(valid_path).mean()) if os.path.isfile(valid_path) else 1.0
        row = {"view": view.id, "psnr": psnr(render, view.image), "ssim": ssim(render, view.image),
               "coverage": coverage}
        if confidence_dir:
            w_image = float(image_weights.get(view.id, 1.0))
            w_path = os.path.join(confidence_dir, f"{view.id}_wpixel.pfm")
            w_pixel = read_pfm(w_path).astype(np.float64) if os.path.isfile(w_path) else np.ones(view.shape)
            weights = ConfidenceWeights(w_image, np.clip(w_pixel, 0.0, 1.0), thresholds.lam)
            row["w_image"] = w_image
            row["weighted_loss"] = weighted_loss(render, view.image, weights)
        rows.append(row)

    if not rows:
        raise MissingFile("renders", renders_dir)
    baseline = confidence.get("baseline")
    difficulty = confidence.get("difficulty")
    if baseline is not None and hard_baseline is not None:
        difficulty = baseline_difficulty(baseline, hard_baseline)
    frame = report.write_report(out_dir, rows, baseline, difficulty)
    return StageResult("metrics", report.summary_line(frame, out_dir),
                       [os.path.join(out_dir, "report.txt"), os.path.join(out_dir, "report.json")])


def run_pipeline(manifest, targets_path, out_dir, thresholds: Thresholds = Thresholds(),
                 refs: Optional[Sequence[int]] = None, threads: int = 1, with_suppression: bool = True,
                 dedup: bool = False, hard_baseline: Optional[float] = None) -> StageResult:
    """warp -> suppress -> fuse -> project -> confidence, each stage reading the previous one's files."""
    warp_dir = os.path.join(out_dir, "warp")
    fusion_dir = os.path.join(out_dir, "fusion")
    stages = [run_warp(manifest, targets_path, warp_dir, thresholds, refs, threads)]
    if with_suppression:
        stages.append(run_suppress(warp_dir, targets_path, os.path.join(out_dir, "suppressed"),
                                   thresholds.tau_d, threads))
    stages.append(run_fuse(manifest, fusion_dir, thresholds, threads, dedup))
    stages.append(run_project(os.path.join(fusion_dir, "fused.ply"), targets_path,
                              os.path.join(out_dir, "global"), threads))
    stages.append(run_confidence(manifest, os.path.join(fusion_dir, "counts"), targets_path,
                                 os.path.join(out_dir, "confidence"), thresholds, refs, hard_baseline, threads))
    for stage in stages:
        logger.info(stage.summary)

    state = {
        "thresholds": thresholds.as_dict(),
        "references": select_references(len(read_manifest(manifest)), refs),
        "targets": [tid for tid, _ in read_targets(targets_path)],
        "stages": [stage.stage for stage in stages],
        "suppress": with_suppression,
        "dedup": dedup,
    }
    save_state(os.path.join(out_dir, "run_state.json"), state)
    return StageResult("pipeline", f"pipeline: {len(state['targets'])} targets, {len(stages)} stages -> {out_dir}")
