"""Stage wiring: NSW -> PCA -> nu-SVC -> STV -> argmax, plus paired ablations.

Trial seeding: ``np.random.SeedSequence(config.seed).spawn(trials)`` gives
one child per trial; ``child.generate_state(2)`` yields the training-sample
seed and the seed for cross-validation folds and probability calibration.
Every stage set in an ablation therefore sees the same training pixels.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import HsiCube, LabelRaster, ProbabilityTensor, TrainingSet, ValidationError, sample_training_set, validate_pair
from .evaluation import TrialReport, trial_metrics
from .io import SyntheticSceneSpec, generate_synthetic, read_cube, read_labels
from .nsw import NswParams, reconstruct_cube
from .pca import fit_pca, transform
from .stv import StvParams, classify, smooth_tensor
from .svc import (
    DEFAULT_GAMMA_GRID,
    DEFAULT_NU_GRID,
    FeatureScaler,
    cross_validate,
    predict_probability_tensor,
    train_multiclass,
)

logger = logging.getLogger(__name__)

STAGES = ("nsw", "pca", "svc", "stv")

# (window, principal components, beta1) tuned for 10 training pixels per class
SCENE_DEFAULTS = {
    "indian_pines": (21, 25, 0.2),
    "salinas": (29, 41, 0.8),
    "pavia_center": (11, 9, 0.2),
    "ksc": (17, 67, 0.1),
    "botswana": (17, 9, 0.2),
    "paviau": (5, 23, 0.2),
}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException, trial: int | None = None):
        where = f" (trial {trial})" if trial is not None else ""
        super().__init__(f"stage '{stage}' failed{where}: {cause}")
        self.stage = stage
        self.trial = trial


def normalize_stages(stages: Iterable[str]) -> frozenset[str]:
    s = frozenset(x.strip().lower() for x in stages if x.strip())
    if not s:
        raise ValidationError("stage set is empty")
    unknown = s - set(STAGES)
    if unknown:
        raise ValidationError(f"unknown stage(s): {sorted(unknown)}")
    if "svc" not in s:
        raise ValidationError("the svc stage cannot be disabled")
    return s


def stage_name(stages: Iterable[str]) -> str:
    s = set(stages)
    return "+".join(x for x in STAGES if x in s)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything needed to reproduce a run.

    Input is either ``cube_path``/``labels_path`` or ``synthetic``.
    ``scene`` only selects parameter defaults at resolution time.
    """

    nsw: NswParams = NswParams()
    pca_dims: int = 25
    pca_center: bool = True
    nu_grid: tuple[float, ...] = DEFAULT_NU_GRID
    gamma_grid: tuple[float, ...] = DEFAULT_GAMMA_GRID
    svc_tol: float = 1e-3
    cv_folds: int = 5
    svc_scale: bool = True
    stv: StvParams = StvParams()
    stages: frozenset = frozenset(STAGES)
    per_class: int = 10
    trials: int = 10
    seed: int = 0
    cube_path: str | None = None
    labels_path: str | None = None
    synthetic: SyntheticSceneSpec | None = None
    scene: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "stages", normalize_stages(self.stages))
        if self.pca_dims < 1:
            raise ValidationError("pca_dims must be >= 1")
        if self.per_class < 1 or self.trials < 1:
            raise ValidationError("per_class and trials must be >= 1")
        if self.cv_folds < 2:
            raise ValidationError("cv_folds must be >= 2")
        if not self.nu_grid or not self.gamma_grid:
            raise ValidationError("parameter grids must be non-empty")

    def with_stages(self, stages: Iterable[str]) -> "PipelineConfig":
        return replace(self, stages=normalize_stages(stages))


def trial_seeds(seed: int, trials: int) -> list[tuple[int, int]]:
    children = np.random.SeedSequence(seed).spawn(trials)
    return [tuple(int(v) for v in c.generate_state(2)) for c in children]


def compute_features(cube: HsiCube, config: PipelineConfig, stages: frozenset | None = None) -> np.ndarray:
    """d x (M*N) classifier input for the enabled pre-processing stages."""
    stages = config.stages if stages is None else stages
    data = cube
    if "nsw" in stages:
        t0 = time.perf_counter()
        try:
            data = reconstruct_cube(cube, config.nsw)
        except Exception as exc:  # noqa: BLE001
            raise StageError("nsw", exc) from exc
        logger.info("nsw reconstruction took %.2fs", time.perf_counter() - t0)
    mat = data.as_matrix()
    if "pca" in stages:
        try:
            model = fit_pca(mat, min(config.pca_dims, mat.shape[0]), center=config.pca_center)
            mat = transform(model, mat)
        except Exception as exc:  # noqa: BLE001
            raise StageError("pca", exc) from exc
        logger.info("pca kept %.4f of the variance", model.captured_fraction)
    if config.svc_scale:
        mat = FeatureScaler.fit(mat).transform(mat)
    return np.asarray(mat, dtype=np.float64)


@dataclass(eq=False)
class TrialOutput:
    training: TrainingSet
    probabilities: ProbabilityTensor
    smoothed: ProbabilityTensor
    prediction: LabelRaster
    svc_params: tuple[float, float]
    stv_converged: bool = True


def svc_stage(D: np.ndarray, gt: LabelRaster, training: TrainingSet, config: PipelineConfig,
              fit_seed: int) -> tuple[ProbabilityTensor, tuple[float, float]]:
    X = D[:, training.flat_index].T
    y = training.classes
    params = cross_validate(X, y, config.nu_grid, config.gamma_grid, config.cv_folds, fit_seed, config.svc_tol)
    model = train_multiclass(X, y, params, seed=fit_seed)
    V = predict_probability_tensor(model, D, training, background=~gt.foreground)
    return V, (params.nu, params.gamma)


def stv_stage(V: ProbabilityTensor, training: TrainingSet, config: PipelineConfig, stages
              ) -> tuple[ProbabilityTensor, bool]:
    if "stv" not in stages:
        return V, True
    U, results = smooth_tensor(V, training.mask(), config.stv)
    return U, all(r.converged for r in results)


def run_trial(D: np.ndarray, gt: LabelRaster, config: PipelineConfig, sample_seed: int,
              fit_seed: int, stages: frozenset | None = None) -> TrialOutput:
    stages = config.stages if stages is None else stages
    training = sample_training_set(gt, config.per_class, sample_seed)
    try:
        V, svc_params = svc_stage(D, gt, training, config, fit_seed)
    except Exception as exc:  # noqa: BLE001
        raise StageError("svc", exc) from exc
    try:
        U, ok = stv_stage(V, training, config, stages)
    except Exception as exc:  # noqa: BLE001
        raise StageError("stv", exc) from exc
    return TrialOutput(training, V, U, classify(U), svc_params, ok)


def ablate(cube: HsiCube, gt: LabelRaster, config: PipelineConfig,
           stage_sets: Mapping[str, Iterable[str]] | Sequence[Iterable[str]],
           trials: int | None = None) -> dict[str, TrialReport]:
    """Run several stage sets on shared per-trial training sets.

    Returns one :class:`TrialReport` per stage set, keyed by the mapping key
    or by the canonical stage name (``nsw+pca+svc+stv``); repeated names get
    a ``#2``, ``#3`` suffix. Classifier outputs are reused between stage sets
    that only differ in the smoothing stage.
    """
    cube, gt = validate_pair(cube, gt)
    if isinstance(stage_sets, Mapping):
        items = [(k, normalize_stages(v)) for k, v in stage_sets.items()]
    else:
        items = []
        seen: dict[str, int] = {}
        for s in stage_sets:
            s = normalize_stages(s)
            base = stage_name(s)
            seen[base] = seen.get(base, 0) + 1
            items.append((base if seen[base] == 1 else f"{base}#{seen[base]}", s))
    if not items:
        raise ValidationError("no stage sets given")
    n_trials = config.trials if trials is None else trials
    seeds = trial_seeds(config.seed, n_trials)

    features: dict[tuple[bool, bool], np.ndarray] = {}
    svc_cache: dict[tuple[bool, bool, int], tuple] = {}
    results = {name: [] for name, _ in items}
    counts = {name: np.zeros(gt.shape, dtype=np.int64) for name, _ in items}
    svc_params = {name: [] for name, _ in items}
    stv_ok = {name: True for name, _ in items}
    for t, (sample_seed, fit_seed) in enumerate(seeds):
        training = sample_training_set(gt, config.per_class, sample_seed)
        evaluated = gt.foreground & ~training.mask()
        for name, stages in items:
            fkey = ("nsw" in stages, "pca" in stages)
            if fkey not in features:
                features[fkey] = compute_features(cube, config, stages)
            key = (*fkey, t)
            if key not in svc_cache:
                try:
                    svc_cache[key] = svc_stage(features[fkey], gt, training, config, fit_seed)
                except Exception as exc:  # noqa: BLE001
                    raise StageError("svc", exc, t) from exc
            V, params = svc_cache[key]
            try:
                U, ok = stv_stage(V, training, config, stages)
            except Exception as exc:  # noqa: BLE001
                raise StageError("stv", exc, t) from exc
            pred = classify(U)
            results[name].append(trial_metrics(gt, pred, training))
            counts[name] += (pred.labels != gt.labels) & evaluated
            svc_params[name].append(params)
            stv_ok[name] &= ok
            logger.info("trial %d %s: OA %.4f", t, name, results[name][-1]["OA"])
        for k in [k for k in svc_cache if k[2] == t]:
            del svc_cache[k]
    return {
        name: TrialReport(
            trials=results[name],
            error_counts=counts[name],
            n_classes=gt.n_classes,
            seed=config.seed,
            info={"stages": stage_name(stages), "svc_params": svc_params[name], "stv_converged": stv_ok[name]},
        )
        for name, stages in items
    }


def load_inputs(config: PipelineConfig) -> tuple[HsiCube, LabelRaster]:
    """Read the cube/label pair named by the config, or generate the synthetic scene."""
    if config.synthetic is not None:
        if config.cube_path or config.labels_path:
            raise ValidationError("give either input files or a synthetic scene, not both")
        return generate_synthetic(config.synthetic)
    if not (config.cube_path and config.labels_path):
        raise ValidationError("both a cube and a label file are required")
    return validate_pair(read_cube(config.cube_path), read_labels(config.labels_path))


def run(cube: HsiCube, gt: LabelRaster, config: PipelineConfig) -> TrialReport:
    return ablate(cube, gt, config, {stage_name(config.stages): config.stages})[stage_name(config.stages)]


# -- key/value config files ---------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list, frozenset, set)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def config_to_kv(config: PipelineConfig) -> dict[str, str]:
    """Flat ``key -> value`` strings; keys are the CLI flag names."""
    out = {
        "stages": stage_name(config.stages),
        "nsw-window": _fmt(config.nsw.window),
        "nsw-offset-min": _fmt(config.nsw.offset_min),
        "nsw-eps": _fmt(config.nsw.eps),
        "pca-dims": _fmt(config.pca_dims),
        "pca-no-center": _fmt(not config.pca_center),
        "svc-grid-nu": _fmt(tuple(config.nu_grid)),
        "svc-grid-gamma": _fmt(tuple(config.gamma_grid)),
        "svc-tol": _fmt(config.svc_tol),
        "svc-folds": _fmt(config.cv_folds),
        "svc-scale": _fmt(config.svc_scale),
        "beta1": _fmt(config.stv.beta1),
        "beta2": _fmt(config.stv.beta2),
        "admm-mu": _fmt(config.stv.mu),
        "stv-tol": _fmt(config.stv.tol),
        "stv-max-iters": _fmt(config.stv.max_iter),
        "stv-isotropic": _fmt(config.stv.isotropic),
        "per-class": _fmt(config.per_class),
        "trials": _fmt(config.trials),
        "seed": _fmt(config.seed),
    }
    if config.scene:
        out["scene"] = config.scene
    if config.cube_path:
        out["cube"] = config.cube_path
    if config.labels_path:
        out["labels"] = config.labels_path
    if config.synthetic is not None:
        s = config.synthetic
        out.update({
            "synth-rows": _fmt(s.rows),
            "synth-cols": _fmt(s.cols),
            "synth-bands": _fmt(s.bands),
            "synth-classes": _fmt(s.classes),
            "synth-patch": _fmt(float(s.patch_size)),
            "synth-noise": _fmt(float(s.noise)),
            "synth-cov-scale": _fmt(float(s.covariance_scale)),
            "synth-seed": _fmt(s.seed),
        })
    return out


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in {"1", "true", "yes", "on"}:
        return True
    if v in {"0", "false", "no", "off"}:
        return False
    raise ValidationError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


KNOWN_KEYS = {
    "stages", "nsw-window", "nsw-offset-min", "nsw-eps", "pca-dims", "pca-no-center",
    "svc-grid-nu", "svc-grid-gamma", "svc-tol", "svc-folds", "svc-scale", "beta1", "beta2",
    "admm-mu", "stv-tol", "stv-max-iters", "stv-isotropic", "per-class", "trials", "seed",
    "scene", "cube", "labels", "synth-rows", "synth-cols", "synth-bands", "synth-classes",
    "synth-patch", "synth-noise", "synth-cov-scale", "synth-seed",
}


def config_from_kv(kv: Mapping[str, str]) -> PipelineConfig:
    """Build a config from string pairs; missing keys take defaults.

    A ``scene`` key fills window, principal components and beta1 from the
    per-scene table unless those keys are given explicitly.
    """
    unknown = set(kv) - KNOWN_KEYS
    if unknown:
        raise ValidationError(f"unknown config key(s): {sorted(unknown)}")
    kv = dict(kv)
    scene = kv.get("scene")
    if scene:
        key = scene.strip().lower().replace(" ", "_")
        if key not in SCENE_DEFAULTS:
            raise ValidationError(f"unknown scene {scene!r}; known: {sorted(SCENE_DEFAULTS)}")
        w, d, b1 = SCENE_DEFAULTS[key]
        kv.setdefault("nsw-window", str(w))
        kv.setdefault("pca-dims", str(d))
        kv.setdefault("beta1", repr(b1))
    dflt = PipelineConfig()
    try:
        nsw = NswParams(
            window=int(kv.get("nsw-window", dflt.nsw.window)),
            eps=float(kv.get("nsw-eps", dflt.nsw.eps)),
            offset_min=int(kv.get("nsw-offset-min", dflt.nsw.offset_min)),
        )
        stv = StvParams(
            beta1=float(kv.get("beta1", dflt.stv.beta1)),
            beta2=float(kv.get("beta2", dflt.stv.beta2)),
            mu=float(kv.get("admm-mu", dflt.stv.mu)),
            max_iter=int(kv.get("stv-max-iters", dflt.stv.max_iter)),
            tol=float(kv.get("stv-tol", dflt.stv.tol)),
            isotropic=_bool(kv.get("stv-isotropic", "false")),
        )
        synthetic = None
        if any(k.startswith("synth-") for k in kv):
            base = SyntheticSceneSpec()
            synthetic = SyntheticSceneSpec(
                rows=int(kv.get("synth-rows", base.rows)),
                cols=int(kv.get("synth-cols", base.cols)),
                bands=int(kv.get("synth-bands", base.bands)),
                classes=int(kv.get("synth-classes", base.classes)),
                patch_size=float(kv.get("synth-patch", base.patch_size)),
                noise=float(kv.get("synth-noise", base.noise)),
                covariance_scale=float(kv.get("synth-cov-scale", base.covariance_scale)),
                seed=int(kv.get("synth-seed", base.seed)),
            )
        return PipelineConfig(
            nsw=nsw,
            pca_dims=int(kv.get("pca-dims", dflt.pca_dims)),
            pca_center=not _bool(kv.get("pca-no-center", "false")),
            nu_grid=_floats(kv["svc-grid-nu"]) if "svc-grid-nu" in kv else dflt.nu_grid,
            gamma_grid=_floats(kv["svc-grid-gamma"]) if "svc-grid-gamma" in kv else dflt.gamma_grid,
            svc_tol=float(kv.get("svc-tol", dflt.svc_tol)),
            cv_folds=int(kv.get("svc-folds", dflt.cv_folds)),
            svc_scale=_bool(kv.get("svc-scale", "true")),
            stv=stv,
            stages=frozenset(kv.get("stages", stage_name(STAGES)).replace("+", ",").split(",")),
            per_class=int(kv.get("per-class", dflt.per_class)),
            trials=int(kv.get("trials", dflt.trials)),
            seed=int(kv.get("seed", dflt.seed)),
            cube_path=kv.get("cube"),
            labels_path=kv.get("labels"),
            synthetic=synthetic,
            scene=scene,
        )
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad config value: {exc}") from exc


def parse_kv_text(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def format_kv_text(kv: Mapping[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in kv.items())
