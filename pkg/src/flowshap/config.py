"""Run configuration: defaults, INI config files, and flag overrides.

Precedence is flags over config file over defaults. A single master seed
drives every stage; stage seeds are derived at fixed offsets so each stage
is independently reproducible.
"""

import configparser
from dataclasses import dataclass, replace

from .gbt import Hyperparams
from .ingest import DEFAULT_DROP_COLUMNS, DEFAULT_LABEL_COLUMN, SplitSpec

SEED_OFFSET_SPLIT = 0
SEED_OFFSET_TRAIN = 1
SEED_OFFSET_CARVE = 2

VALIDATION_CARVE_FRACTION = 0.75  # selection trains on 75% of train, scores on the rest

SELECTION_METHODS = ("shap", "correlation", "chi_square", "anova")


@dataclass(frozen=True)
class RunConfig:
    input_csv: str | None = None
    label_column: str = DEFAULT_LABEL_COLUMN
    drop_columns: tuple = DEFAULT_DROP_COLUMNS
    seed: int = 0
    output_dir: str = "out"
    train_fraction: float = 0.8
    stratified: bool = True
    n_estimators: int = 100
    learning_rate: float = 0.3
    max_depth: int = 6
    min_child_weight: float = 1.0
    gamma: float = 0.0
    reg_lambda: float = 1.0
    reg_alpha: float = 0.0
    base_score: float = 0.5
    method: str = "shap"
    k_for_filters: int = 12
    max_candidates: int | None = None
    patience: int | None = None
    evaluation_scope: str = "validation"
    explain_rows: str = "test"

    def __post_init__(self):
        if self.method not in SELECTION_METHODS:
            raise ValueError(f"method must be one of {SELECTION_METHODS}")
        if self.evaluation_scope not in ("validation", "test"):
            raise ValueError("evaluation_scope must be 'validation' or 'test'")
        if self.explain_rows not in ("test", "train"):
            raise ValueError("explain rows must be 'test' or 'train'")

    def split_spec(self) -> SplitSpec:
        return SplitSpec(
            train_fraction=self.train_fraction,
            seed=self.seed + SEED_OFFSET_SPLIT,
            stratified=self.stratified,
        )

    def carve_spec(self) -> SplitSpec:
        return SplitSpec(
            train_fraction=VALIDATION_CARVE_FRACTION,
            seed=self.seed + SEED_OFFSET_CARVE,
            stratified=self.stratified,
        )

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(
            n_estimators=self.n_estimators,
            learning_rate=self.learning_rate,
            max_depth=self.max_depth,
            min_child_weight=self.min_child_weight,
            gamma=self.gamma,
            reg_lambda=self.reg_lambda,
            reg_alpha=self.reg_alpha,
            base_score=self.base_score,
            seed=self.seed + SEED_OFFSET_TRAIN,
        )


def _optional_int(text: str):
    text = text.strip()
    return int(text) if text else None


def load_config_file(path, base: RunConfig | None = None) -> RunConfig:
    """Layer an INI file over the given (or default) configuration."""
    cfg = base or RunConfig()
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    updates = {}
    if parser.has_section("run"):
        run = parser["run"]
        if "input_csv" in run:
            updates["input_csv"] = run["input_csv"].strip() or None
        if "label_column" in run:
            updates["label_column"] = run["label_column"].strip()
        if "drop_columns" in run:
            raw = run["drop_columns"].strip()
            updates["drop_columns"] = tuple(
                c.strip() for c in raw.split(",") if c.strip()
            ) if raw else ()
        if "seed" in run:
            updates["seed"] = int(run["seed"])
        if "output_dir" in run:
            updates["output_dir"] = run["output_dir"].strip()
    if parser.has_section("split"):
        split = parser["split"]
        if "train_fraction" in split:
            updates["train_fraction"] = float(split["train_fraction"])
        if "stratified" in split:
            updates["stratified"] = split.getboolean("stratified")
    if parser.has_section("hyperparams"):
        hp = parser["hyperparams"]
        for key, cast, attr in (
            ("n_estimators", int, "n_estimators"),
            ("learning_rate", float, "learning_rate"),
            ("max_depth", int, "max_depth"),
            ("min_child_weight", float, "min_child_weight"),
            ("gamma", float, "gamma"),
            ("lambda", float, "reg_lambda"),
            ("alpha", float, "reg_alpha"),
            ("base_score", float, "base_score"),
        ):
            if key in hp:
                updates[attr] = cast(hp[key])
    if parser.has_section("selection"):
        sel = parser["selection"]
        if "method" in sel:
            updates["method"] = sel["method"].strip()
        if "k_for_filters" in sel:
            updates["k_for_filters"] = int(sel["k_for_filters"])
        if "max_candidates" in sel:
            updates["max_candidates"] = _optional_int(sel["max_candidates"])
        if "patience" in sel:
            updates["patience"] = _optional_int(sel["patience"])
        if "evaluation_scope" in sel:
            updates["evaluation_scope"] = sel["evaluation_scope"].strip()
    if parser.has_section("explain"):
        exp = parser["explain"]
        if "rows" in exp:
            updates["explain_rows"] = exp["rows"].strip()
    return replace(cfg, **updates)


def write_config_file(cfg: RunConfig, path) -> None:
    """Echo the effective configuration; feeding it back reproduces the run."""
    parser = configparser.ConfigParser()
    parser["run"] = {
        "input_csv": cfg.input_csv or "",
        "label_column": cfg.label_column,
        "drop_columns": ", ".join(cfg.drop_columns),
        "seed": str(cfg.seed),
        "output_dir": cfg.output_dir,
    }
    parser["split"] = {
        "train_fraction": repr(cfg.train_fraction),
        "stratified": str(cfg.stratified).lower(),
    }
    parser["hyperparams"] = {
        "n_estimators": str(cfg.n_estimators),
        "learning_rate": repr(cfg.learning_rate),
        "max_depth": str(cfg.max_depth),
        "min_child_weight": repr(cfg.min_child_weight),
        "gamma": repr(cfg.gamma),
        "lambda": repr(cfg.reg_lambda),
        "alpha": repr(cfg.reg_alpha),
        "base_score": repr(cfg.base_score),
    }
    parser["selection"] = {
        "method": cfg.method,
        "k_for_filters": str(cfg.k_for_filters),
        "max_candidates": "" if cfg.max_candidates is None else str(cfg.max_candidates),
        "patience": "" if cfg.patience is None else str(cfg.patience),
        "evaluation_scope": cfg.evaluation_scope,
    }
    parser["explain"] = {"rows": cfg.explain_rows}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
