"""Stage-2 semantic optimization and the 2D prior-refinement loop.

The loop renders the model's label mask, finds where the prior
disagrees, turns the biggest disagreements into box+point prompts, asks
the segmenter for a new mask, and keeps it only when it agrees with the
render strictly better than the old prior did. Geometry and motion stay
frozen throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .metrics import jaccard
from .objectives import evaluate_supervision
from .optim import Adam
from .regions import connected_components, edt
from .render.backward import rasterize_backward
from .render.raster import rasterize
from .rng import stream

STAGE2_GROUPS = ("sem_logit",)


@dataclass(frozen=True)
class PromptSet:
    """Per-object segmenter prompt: tight box plus labeled points."""

    object_id: int
    box: tuple          # (x0, y0, x1, y1) inclusive, tight on the render
    points: tuple       # ((x, y, positive), ...) length <= m


def render_semantic_mask(scene, bases, camera, t: int,
                         alpha_min: float = 0.5) -> np.ndarray:
    """Model's label mask at frame t: channel argmax, low alpha -> 0."""
    out = rasterize(scene, bases, camera, t, channels=("sem",))
    labels = np.argmax(out.semantic_probs, axis=-1).astype(np.int32)
    return np.where(out.alpha >= alpha_min, labels, 0).astype(np.int32)


def mismatch_regions(rendered_mask, prior_mask, object_id: int):
    """(fp, fn): prior lacks the object / prior has it where render doesn't."""
    r = rendered_mask == object_id
    p = prior_mask == object_id
    return r & ~p, p & ~r


def generate_prompts(rendered_mask, prior_mask, num_objects: int,
                     max_points: int = 3,
                     min_mismatch_area: int = 20) -> list[PromptSet]:
    """One PromptSet per object whose prior disagrees enough with the render.

    The point for each of the largest mismatch components sits at the
    component's distance-transform argmax (row-major on ties), positive
    when that pixel belongs to the rendered object.
    """
    prompts = []
    for k in range(1, num_objects + 1):
        rend_k = rendered_mask == k
        if not rend_k.any():
            continue
        fp, fn = mismatch_regions(rendered_mask, prior_mask, k)
        mism = fp | fn
        if int(mism.sum()) < min_mismatch_area:
            continue
        ys, xs = np.nonzero(rend_k)
        box = (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))

        labels, n = connected_components(mism)
        areas = np.bincount(labels.ravel(), minlength=n + 1)[1:]
        order = np.lexsort((np.arange(n), -areas))
        points = []
        for rid in order[:max_points] + 1:
            dist = edt(labels == rid)
            flat = int(np.argmax(dist))
            y, x = divmod(flat, dist.shape[1])
            points.append((float(x), float(y), bool(rend_k[y, x])))
        prompts.append(PromptSet(object_id=k, box=box, points=tuple(points)))
    return prompts


def refine_priors(scene, bases, dataset, chunk: range, segmenter,
                  num_objects: int, max_points: int = 3,
                  min_mismatch_area: int = 20, alpha_min: float = 0.5):
    """One prompting round over the chunk; replaces priors that improve.

    A frame's prior mask is swapped for the segmenter's answer only when
    mean per-object Jaccard against the rendered mask strictly improves.
    Segmenter failures keep the old prior and are logged.
    """
    log = []
    for t in chunk:
        fr = dataset.frames[t]
        rendered = render_semantic_mask(scene, bases, dataset.cameras[t], t,
                                        alpha_min)
        prompts = generate_prompts(rendered, fr.mask, num_objects,
                                   max_points, min_mismatch_area)
        if not prompts:
            continue
        try:
            new_mask = segmenter.segment(t, prompts, fr.mask)
        except Exception as exc:  # noqa: BLE001 - segmenter is external
            log.append({"stage": 2, "t": t, "event": "segmenter_error",
                        "detail": repr(exc)})
            continue
        new_mask = np.asarray(new_mask)
        if new_mask.shape != fr.mask.shape:
            log.append({"stage": 2, "t": t, "event": "segmenter_error",
                        "detail": f"bad mask shape {new_mask.shape}"})
            continue
        old = _mean_object_jaccard(fr.mask, rendered, num_objects)
        new = _mean_object_jaccard(new_mask, rendered, num_objects)
        if new > old:
            fr.mask[...] = new_mask.astype(fr.mask.dtype)
            log.append({"stage": 2, "t": t, "event": "prior_replaced",
                        "agreement_old": old, "agreement_new": new})
        else:
            log.append({"stage": 2, "t": t, "event": "prior_kept",
                        "agreement_old": old, "agreement_new": new})
    return log


def _mean_object_jaccard(mask_a, mask_b, num_objects: int) -> float:
    vals = [jaccard(mask_a == k, mask_b == k) for k in range(1, num_objects + 1)]
    return float(np.mean(vals))


def run_semantic_stage(scene, bases, dataset, chunk: range, segmenter,
                       cfg: RunConfig, opt: Adam | None = None, rng=None):
    """Alternate prior refinement with semantic-logit fitting.

    rounds == 0 degenerates to a single fitting block on untouched
    priors. Refinement runs before each fitting block so the final block
    always fits the freshest priors. Returns (scene, bases, log); only
    sem_logit moves.
    """
    if rng is None:
        rng = stream(cfg.seed, "semantic", chunk.start)
    if opt is None:
        from .motion_refine import scene_extent
        opt = Adam(cfg.lr.resolve(scene_extent(scene)))
    log: list[dict] = []

    rounds = max(cfg.rounds, 0)
    for r in range(max(rounds, 1)):
        if rounds > 0 and cfg.refine_enabled:
            log.extend(refine_priors(scene, bases, dataset, chunk, segmenter,
                                     dataset.num_objects))
        for s in range(cfg.steps_stage2_per_round):
            t = chunk.start + int(rng.integers(len(chunk)))
            fr = dataset.frames[t]
            cam = dataset.cameras[t]
            out = rasterize(scene, bases, cam, t, channels=("sem",))
            res = evaluate_supervision(out, cam, None, fr.image, fr.mask,
                                       weights=cfg.weights, cfg=cfg.objective,
                                       include_motion=False)
            grads = rasterize_backward(out, res.grads)
            opt.step({"sem_logit": scene.sem_logit}, grads)
            log.append({"stage": 2, "round": r, "step": s, "t": t,
                        "total": res.total, "sem": res.terms.get("sem", 0.0),
                        "n_gaussians": scene.count})
    return scene, bases, log
