"""Transfer evaluation, parameter sweeps, and delimited report output.

Adversarial examples are crafted once on the substitute and scored
against every victim; victims are never queried while crafting.  The
success-rate denominator counts only inputs the victim classifies
correctly when clean, so a zero budget scores exactly zero.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, replace

import numpy as np

from . import models
from .attacks import AttackConfig, Ensemble, craft_batch
from .data import Dataset

SWEEP_PARAMS = ("sigma", "rho", "n_transforms", "block_size")


@dataclass
class VictimResult:
    victim_id: str
    white_box: bool
    n_evaluated: int
    n_success: int

    @property
    def success_rate(self) -> float:
        return self.n_success / self.n_evaluated if self.n_evaluated else 0.0


@dataclass
class TransferReport:
    substitute_id: str
    results: list[VictimResult]
    config: dict
    n_images: int
    seed: int

    @property
    def mean_rate(self) -> float:
        return float(np.mean([r.success_rate for r in self.results]))

    def rate(self, victim_id: str) -> float:
        for r in self.results:
            if r.victim_id == victim_id:
                return r.success_rate
        raise KeyError(victim_id)


def config_snapshot(config: AttackConfig) -> dict:
    snap = dataclasses.asdict(config)
    snap["augmentations"] = sorted(config.augmentations)
    return snap


def _check_compatible(substitute, victims):
    shape, classes = substitute.input_shape, substitute.n_classes
    for vid, victim in victims:
        if victim.input_shape != shape or victim.n_classes != classes:
            raise ValueError(
                f"victim {vid!r} ({victim.input_shape}, {victim.n_classes} classes) "
                f"does not match substitute ({shape}, {classes} classes)"
            )


def evaluate_transfer(
    substitute_id: str,
    substitute,
    victims: list[tuple[str, models.Model]],
    dataset: Dataset,
    config: AttackConfig,
    seed: int,
) -> TransferReport:
    """Craft on the substitute, score each victim on its clean-correct inputs."""
    _check_compatible(substitute, victims)
    images = dataset.images
    labels = dataset.labels
    results = craft_batch(substitute, images, labels, config, seed)
    x_adv = np.stack([r.x_adv for r in results])
    victim_results = []
    for vid, victim in victims:
        clean_pred = models.predict(victim, images).argmax(axis=1)
        adv_pred = models.predict(victim, x_adv).argmax(axis=1)
        clean_ok = clean_pred == labels
        fooled = (adv_pred != labels) & clean_ok
        white_box = victim is substitute or vid == substitute_id
        victim_results.append(
            VictimResult(
                victim_id=vid,
                white_box=white_box,
                n_evaluated=int(clean_ok.sum()),
                n_success=int(fooled.sum()),
            )
        )
    return TransferReport(
        substitute_id=substitute_id,
        results=victim_results,
        config=config_snapshot(config),
        n_images=len(dataset),
        seed=seed,
    )


@dataclass
class SweepPoint:
    param: str
    label: str
    report: TransferReport


def ablate(
    param: str,
    grid: list,
    substitute_id: str,
    substitute,
    victims: list[tuple[str, models.Model]],
    dataset: Dataset,
    config: AttackConfig,
    seed: int,
    labels: list[str] | None = None,
) -> list[SweepPoint]:
    """One transfer evaluation per grid value of a spectrum parameter.

    `labels` override how grid values render in reports (the CLI passes
    the user's literal tokens); defaults to str(value).
    """
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r}; pick one of {SWEEP_PARAMS}")
    if len(grid) == 0:
        raise ValueError("sweep grid is empty")
    if config.spectrum is None:
        raise ValueError("sweeping spectrum parameters needs spectrum params set")
    if labels is None:
        labels = [str(v) for v in grid]
    points = []
    for value, label in zip(grid, labels):
        spectrum = replace(config.spectrum, **{param: value})
        point_config = replace(config, spectrum=spectrum)
        report = evaluate_transfer(
            substitute_id, substitute, victims, dataset, point_config, seed
        )
        points.append(SweepPoint(param=param, label=label, report=report))
    return points


# ---- delimited output -------------------------------------------------------

TRANSFER_CSV_HEADER = "victim,white_box,n_evaluated,n_success,success_rate"


def transfer_csv(report: TransferReport) -> str:
    lines = [TRANSFER_CSV_HEADER]
    for r in report.results:
        lines.append(
            f"{r.victim_id},{int(r.white_box)},{r.n_evaluated},"
            f"{r.n_success},{r.success_rate:.4f}"
        )
    return "\n".join(lines) + "\n"


def sweep_csv(points: list[SweepPoint]) -> str:
    victim_ids = [r.victim_id for r in points[0].report.results]
    header = "param,value," + ",".join(f"{vid}_rate" for vid in victim_ids) + ",mean_rate"
    lines = [header]
    for pt in points:
        rates = ",".join(f"{pt.report.rate(vid):.4f}" for vid in victim_ids)
        lines.append(f"{pt.param},{pt.label},{rates},{pt.report.mean_rate:.4f}")
    return "\n".join(lines) + "\n"


ATTACK_CSV_HEADER = "index,label,clean_pred,adv_pred,substitute_success,linf,final_loss"


def attack_csv(indices, labels, clean_preds, adv_preds, results) -> str:
    lines = [ATTACK_CSV_HEADER]
    for i, y, cp, ap, res in zip(indices, labels, clean_preds, adv_preds, results):
        linf = float(np.abs(res.delta).max())
        lines.append(
            f"{i},{y},{cp},{ap},{int(res.success)},{linf:.4f},{res.loss_trace[-1]:.4f}"
        )
    return "\n".join(lines) + "\n"


def write_text(path, content: str) -> None:
    with open(path, "w", newline="") as f:
        f.write(content)
