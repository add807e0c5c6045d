"""Experiment runner, hyperparameter profiles, and table emission.

``full`` profiles mirror the published hyperparameter tables for every
method; ``desk`` profiles keep the same architectures, optimisers, and
learning-rate schedules but shorten the epoch budgets (and shrink the
Fourier stack) so the whole grid runs on one workstation core in minutes.
Each profile entry documents its deviation from the full run.
"""

from __future__ import annotations

import csv
import io as _stdio
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import deeponet as don
from . import fno as fno_mod
from . import pcann as pcann_mod
from .datagen import Problem, SampleSet, build_dataset
from .fields import GridField, rel_l2
from .inversion import TikhonovConfig, inverse_metrics, tikhonov_invert, train_backward, with_noise
from .nets import OptimConfig

METHODS = ("pcann", "pcalin", "fno", "deeponet")
DIRECTIONS = ("forward", "inverse_backward", "inverse_tikhonov")
NOISE_GRID = (0.0, 0.001, 0.01, 0.05, 0.1)

CSV_COLUMNS = [
    "method", "problem", "direction", "s", "noise",
    "rel_l2", "seg_acc", "u_err", "u_tilde_err",
    "params", "train_s_per_epoch", "test_s", "error",
]


@dataclass
class MethodProfile:
    optim: OptimConfig
    extra: dict = field(default_factory=dict)  # architecture knobs per method


def _p(algorithm, lr, wd, step, gamma, epochs, batch, dropout=0.0, **extra):
    return MethodProfile(
        optim=OptimConfig(
            algorithm=algorithm, learning_rate=lr, weight_decay=wd, step_size=step,
            gamma=gamma, epochs=epochs, batch_size=batch, dropout=dropout,
        ),
        extra=extra,
    )


# Published hyperparameters per (method, problem, direction).
FULL_PROFILES = {
    ("pcann", "poisson", "forward"): _p("sgd", 5e-7, 0.1, 2000, 0.5, 20000, 500, d_x=150, d_y=150),
    ("pcann", "poisson", "inverse"): _p("sgd", 1e-5, 0.1, 2500, 0.1, 10000, 500, 0.001, d_x=200, d_y=200),
    ("pcann", "darcy", "forward"): _p("sgd", 1e-6, 0.5, 7500, 0.5, 20000, 500, d_x=150, d_y=150),
    ("pcann", "darcy", "inverse"): _p("sgd", 1e-4, 0.1, 2500, 0.01, 5000, 100, 0.01, d_x=30, d_y=30),
    ("pcalin", "poisson", "forward"): _p("adam", 1e-3, 0.015, 2500, 0.1, 6000, 1000, d_x=250, d_y=250),
    ("pcalin", "poisson", "inverse"): _p("adam", 1e-3, 0.1, 2500, 0.1, 6000, 1000, d_x=250, d_y=250),
    ("pcalin", "darcy", "forward"): _p("adam", 1e-3, 0.1, 0, 1.0, 2000, 1000, d_x=100, d_y=100),
    ("pcalin", "darcy", "inverse"): _p("adam", 1e-3, 0.15, 2500, 0.01, 1000, 200, d_x=100, d_y=100),
    ("fno", "poisson", "forward"): _p("adam", 1e-3, 1e-4, 100, 0.5, 500, 10, modes=12, width=32, n_layers=4),
    ("fno", "poisson", "inverse"): _p("adam", 1e-3, 1e-4, 100, 0.5, 500, 10, modes=12, width=32, n_layers=4),
    ("fno", "darcy", "forward"): _p("adam", 1e-3, 1e-4, 100, 0.5, 500, 10, modes=12, width=32, n_layers=4),
    ("fno", "darcy", "inverse"): _p("adam", 1e-3, 1e-4, 100, 0.5, 500, 10, modes=12, width=32, n_layers=4),
    ("deeponet", "poisson", "forward"): _p(
        "adam", 2e-3, 0.0, 1250, 0.9, 50000, 125, p=128, trunk_widths=(128,) * 6, trunk_activation="tanh"
    ),
    ("deeponet", "poisson", "inverse"): _p(
        "adam", 2e-3, 0.0, 1250, 0.9, 50000, 125, p=128, trunk_widths=(128,) * 6, trunk_activation="tanh"
    ),
    ("deeponet", "darcy", "forward"): _p(
        "adam", 2e-3, 0.0, 1250, 0.9, 50000, 125, p=128, trunk_widths=(128,) * 4, trunk_activation="relu"
    ),
    ("deeponet", "darcy", "inverse"): _p(
        "adam", 2e-3, 0.0, 1250, 0.9, 50000, 125, p=128, trunk_widths=(128,) * 4, trunk_activation="sine"
    ),
}

# Desk-scale deviations: epoch budgets cut to minutes; Fourier stack shrunk
# to width 16 / 8 modes / 3 layers; operator-net capacity kept.
DESK_PROFILES = {
    ("pcann", "poisson", "forward"): _p("sgd", 5e-7, 0.1, 2000, 0.5, 200, 500, d_x=150, d_y=150),
    ("pcann", "poisson", "inverse"): _p("sgd", 1e-5, 0.1, 2500, 0.1, 200, 500, 0.001, d_x=200, d_y=200),
    ("pcann", "darcy", "forward"): _p("sgd", 1e-6, 0.5, 7500, 0.5, 250, 500, d_x=150, d_y=150),
    ("pcann", "darcy", "inverse"): _p("sgd", 1e-4, 0.1, 2500, 0.01, 250, 100, 0.01, d_x=30, d_y=30),
    ("pcalin", "poisson", "forward"): _p("adam", 1e-3, 0.0, 1200, 0.2, 3000, 1000, d_x=150, d_y=150),
    ("pcalin", "poisson", "inverse"): _p("adam", 1e-3, 0.0, 1200, 0.2, 3000, 1000, d_x=250, d_y=250),
    ("pcalin", "darcy", "forward"): _p("adam", 1e-3, 0.0, 0, 1.0, 1500, 1000, d_x=100, d_y=100),
    ("pcalin", "darcy", "inverse"): _p("adam", 1e-3, 0.0, 1200, 0.2, 1500, 200, d_x=100, d_y=100),
    ("fno", "poisson", "forward"): _p("adam", 1e-3, 1e-4, 40, 0.5, 100, 20, modes=8, width=16, n_layers=3),
    ("fno", "poisson", "inverse"): _p("adam", 1e-3, 1e-4, 40, 0.5, 100, 20, modes=8, width=16, n_layers=3),
    ("fno", "darcy", "forward"): _p("adam", 1e-3, 1e-4, 40, 0.5, 100, 20, modes=8, width=16, n_layers=3),
    ("fno", "darcy", "inverse"): _p("adam", 1e-3, 1e-4, 40, 0.5, 100, 20, modes=8, width=16, n_layers=3),
    ("deeponet", "poisson", "forward"): _p(
        "adam", 2e-3, 0.0, 120, 0.9, 400, 125, p=64, trunk_widths=(128,) * 6, trunk_activation="tanh"
    ),
    ("deeponet", "poisson", "inverse"): _p(
        "adam", 2e-3, 0.0, 120, 0.9, 400, 125, p=64, trunk_widths=(128,) * 6, trunk_activation="tanh"
    ),
    ("deeponet", "darcy", "forward"): _p(
        "adam", 2e-3, 0.0, 120, 0.9, 400, 125, p=64, trunk_widths=(128,) * 4, trunk_activation="relu"
    ),
    ("deeponet", "darcy", "inverse"): _p(
        "adam", 2e-3, 0.0, 120, 0.9, 400, 125, p=64, trunk_widths=(128,) * 4, trunk_activation="sine"
    ),
}

# Regularisation weights (alpha1, alpha2) per (method, problem); the source
# tables pair them with a first-difference penalty on the source problem and
# a total-variation penalty on the diffusion problem.
TIKHONOV_ALPHAS = {
    ("pcann", "poisson"): (0.0005, 0.05),
    ("pcann", "darcy"): (0.0001, 0.005),
    ("pcalin", "poisson"): (0.00001, 0.025),
    ("pcalin", "darcy"): (0.001, 0.001),
    ("fno", "poisson"): (0.0, 0.25),
    ("fno", "darcy"): (0.0, 0.025),
    ("deeponet", "poisson"): (0.0, 0.05),
    ("deeponet", "darcy"): (0.0, 0.025),
}

TIKHONOV_FULL = {"steps": 10000, "lr": 0.1, "lr_decay": (2000, 0.5)}
TIKHONOV_DESK = {"steps": 1500, "lr": 0.1, "lr_decay": (300, 0.5)}


def tikhonov_config(method: str, problem: Problem, profile: str = "desk", **overrides) -> TikhonovConfig:
    alpha1, alpha2 = TIKHONOV_ALPHAS[(method, problem.value)]
    base = dict(TIKHONOV_DESK if profile == "desk" else TIKHONOV_FULL)
    base.update(
        alpha1=alpha1, alpha2=alpha2,
        penalty="difference" if problem is Problem.POISSON else "tv",
    )
    if problem is Problem.DARCY:
        base.update(init="custom", init_value=7.5)
    base.update(overrides)
    return TikhonovConfig(**base)


def method_profile(method: str, problem: Problem, direction: str, profile: str = "desk") -> MethodProfile:
    table = DESK_PROFILES if profile == "desk" else FULL_PROFILES
    key = (method, problem.value, "inverse" if direction.startswith("inverse") else "forward")
    entry = table[key]
    return MethodProfile(optim=replace(entry.optim), extra=dict(entry.extra))


@dataclass
class ExperimentConfig:
    problem: Problem = Problem.POISSON
    direction: str = "forward"
    methods: tuple[str, ...] = ("pcalin",)
    resolutions: tuple[int, ...] = (65,)
    noise_levels: tuple[float, ...] = (0.0,)
    n_train: int = 200
    n_test: int = 50
    seed: int = 0
    profile: str = "desk"
    overrides: dict = field(default_factory=dict)  # method -> {optim fields / extra knobs}

    def __post_init__(self):
        if not self.methods or not self.resolutions:
            raise ValueError("methods and resolutions must be nonempty")
        if self.n_train < 1:
            raise ValueError("n_train must be >= 1")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")


@dataclass
class ReportRow:
    method: str
    problem: str
    direction: str
    s: int
    noise: float
    rel_l2: float | None = None
    seg_acc: float | None = None
    u_err: float | None = None
    u_tilde_err: float | None = None
    params: int | None = None
    train_s_per_epoch: float | None = None
    test_s: float | None = None
    error: str = ""


@dataclass
class Report:
    rows: list[ReportRow] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return any(row.error for row in self.rows)


def derived_seed(master: int, stream: int) -> int:
    return int(np.random.SeedSequence(entropy=master, spawn_key=(stream,)).generate_state(1)[0])


class DatasetCache:
    """Reuses clean datasets across cells, keyed on the generation inputs."""

    def __init__(self):
        self._store: dict[tuple, SampleSet] = {}

    def get(self, problem: Problem, n: int, s: int, seed: int) -> SampleSet:
        key = (problem.value, n, s, seed)
        if key not in self._store:
            self._store[key] = build_dataset(problem, n, s, delta=0.0, seed=seed)
        return self._store[key]


def train_forward_model(method: str, train: SampleSet, prof: MethodProfile, seed: int):
    cfg = replace(prof.optim, seed=seed)
    extra = prof.extra
    if method in ("pcann", "pcalin"):
        return pcann_mod.train_operator(method, train, extra["d_x"], extra["d_y"], cfg)
    if method == "fno":
        return fno_mod.train_fno(train, extra["modes"], extra["width"], cfg, n_layers=extra["n_layers"])
    if method == "deeponet":
        return don.train_deeponet(
            train, extra["p"], cfg,
            trunk_widths=extra["trunk_widths"], trunk_activation=extra["trunk_activation"],
        )
    raise ValueError(f"unknown method {method!r}")


def predict_fields(model, inputs: np.ndarray, s: int) -> np.ndarray:
    if isinstance(model, pcann_mod.PcannModel):
        return pcann_mod.predict_batch(model, inputs)
    if isinstance(model, fno_mod.FnoModel):
        return fno_mod.fno_predict_batch(model, inputs)
    if isinstance(model, don.DeepONetModel):
        return don.don_predict_batch(model, inputs, s)
    raise TypeError(f"cannot predict with {type(model).__name__}")


def model_param_count(model) -> int:
    return model.param_count


def _apply_overrides(prof: MethodProfile, overrides: dict) -> MethodProfile:
    optim_fields = set(OptimConfig.__dataclass_fields__)
    optim_kwargs = {k: v for k, v in overrides.items() if k in optim_fields}
    extra = dict(prof.extra)
    extra.update({k: v for k, v in overrides.items() if k not in optim_fields})
    return MethodProfile(optim=replace(prof.optim, **optim_kwargs), extra=extra)


def _run_cell(method: str, s: int, noise: float, config: ExperimentConfig, cache: DatasetCache) -> ReportRow:
    problem = config.problem
    row = ReportRow(method=method, problem=problem.value, direction=config.direction, s=s, noise=noise)
    train_clean = cache.get(problem, config.n_train, s, derived_seed(config.seed, 10))
    test_clean = cache.get(problem, config.n_test, s, derived_seed(config.seed, 11))
    train = with_noise(train_clean, noise)
    test = with_noise(test_clean, noise)
    prof = _apply_overrides(
        method_profile(method, problem, config.direction, config.profile),
        config.overrides.get(method, {}),
    )
    model_seed = derived_seed(config.seed, 12)

    t0 = time.perf_counter()
    if config.direction == "inverse_backward":
        model = train_backward(method, train, noise, replace(prof.optim, seed=model_seed), **prof.extra)
    else:
        model = train_forward_model(method, train, prof, model_seed)
    train_time = time.perf_counter() - t0
    row.params = model_param_count(model)
    row.train_s_per_epoch = train_time / max(1, prof.optim.epochs)

    t0 = time.perf_counter()
    if config.direction == "forward":
        preds = predict_fields(model, test.lambdas, s)
        errs = [rel_l2(preds[i], test.solutions_clean[i]) for i in range(test.n)]
        row.rel_l2 = float(np.mean(errs))
    else:
        records = []
        if config.direction == "inverse_backward":
            lam_hats = predict_fields(model, test.solutions, s)
        else:
            tik = tikhonov_config(method, problem, config.profile, **config.overrides.get("tikhonov", {}))
            lam_hats = np.stack(
                [tikhonov_invert(model, GridField(test.solutions[i]), tik).values for i in range(test.n)]
            )
        for i in range(test.n):
            records.append(
                inverse_metrics(
                    GridField(lam_hats[i]), test.lam(i), test.u_clean(i), test.u(i), problem,
                )
            )
        row.rel_l2 = float(np.mean([r.rel_l2_error for r in records]))
        if problem is Problem.DARCY:
            row.seg_acc = float(np.mean([r.seg_accuracy_percent for r in records]))
        row.u_err = float(np.mean([r.u_err for r in records]))
        row.u_tilde_err = float(np.mean([r.u_tilde_err for r in records]))
    row.test_s = time.perf_counter() - t0
    return row


def run_experiment(config: ExperimentConfig) -> Report:
    """Train and evaluate every (method, resolution, noise) cell.

    A failing cell is recorded in its row's ``error`` field; the remaining
    cells still run.  Deterministic given the config (timing columns aside).
    """
    cache = DatasetCache()
    report = Report()
    for method in config.methods:
        for s in config.resolutions:
            for noise in config.noise_levels:
                try:
                    row = _run_cell(method, s, noise, config, cache)
                except Exception as exc:  # noqa: BLE001 - cell isolation contract
                    row = ReportRow(
                        method=method, problem=config.problem.value, direction=config.direction,
                        s=s, noise=noise, error=f"{type(exc).__name__}: {exc}",
                    )
                report.rows.append(row)
    return report


# ---- rendering ----


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(report: Report, format: str = "csv") -> str:
    if format == "csv":
        buf = _stdio.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in report.rows:
            writer.writerow([_cell(getattr(row, col)) for col in CSV_COLUMNS])
        return buf.getvalue()
    if format == "markdown":
        return _emit_markdown(report)
    raise ValueError(f"unknown format {format!r}")


def _emit_markdown(report: Report) -> str:
    lines = []
    groups: dict[tuple, list[ReportRow]] = {}
    for row in report.rows:
        groups.setdefault((row.problem, row.direction), []).append(row)
    for (problem, direction), rows in groups.items():
        lines.append(f"### {problem} / {direction}")
        lines.append("")
        header = ["method", "s", "noise", "rel_l2", "seg_acc", "u_err", "u_tilde_err", "params", "error"]
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "---|" * len(header))
        for row in sorted(rows, key=lambda r: (r.method, r.s, r.noise)):
            lines.append(
                "| " + " | ".join(_cell(getattr(row, col)) for col in header) + " |"
            )
        lines.append("")
    return "\n".join(lines)


def parse_report(text: str) -> Report:
    reader = csv.reader(_stdio.StringIO(text))
    header = next(reader)
    if header != CSV_COLUMNS:
        raise ValueError(f"unexpected report header {header}")
    rows = []
    for raw in reader:
        record = dict(zip(CSV_COLUMNS, raw))
        rows.append(
            ReportRow(
                method=record["method"], problem=record["problem"], direction=record["direction"],
                s=int(record["s"]), noise=float(record["noise"]),
                rel_l2=float(record["rel_l2"]) if record["rel_l2"] else None,
                seg_acc=float(record["seg_acc"]) if record["seg_acc"] else None,
                u_err=float(record["u_err"]) if record["u_err"] else None,
                u_tilde_err=float(record["u_tilde_err"]) if record["u_tilde_err"] else None,
                params=int(record["params"]) if record["params"] else None,
                train_s_per_epoch=float(record["train_s_per_epoch"]) if record["train_s_per_epoch"] else None,
                test_s=float(record["test_s"]) if record["test_s"] else None,
                error=record["error"],
            )
        )
    return Report(rows=rows)
