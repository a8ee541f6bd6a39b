"""Flat key=value experiment configuration with typed coercion.

One experiment = one config = one seed. A config file is plain text,
one ``key = value`` per line, ``#`` comments allowed; command-line
overrides use the same keys and win over the file. Unknown keys are
rejected by name before any work starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ValidationError
from .losses import LossConfig
from .protocol import EpisodeConfig, StreamConfig
from .trainer import AugmentConfig, TrainConfig

ABLATIONS = ("baseline", "cn", "sp", "meta")
SWEEPABLE = ("epsilon", "novel_per_session")


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValidationError(f"expected a boolean, got {s!r}")


def _parse_ints(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in s.replace(",", " ").split())
    except ValueError as e:
        raise ValidationError(f"expected integers, got {s!r}") from e


@dataclass
class ExperimentConfig:
    # synthetic data
    num_classes: int = 20
    dim: int = 32
    separation: float = 12.0
    train_per_class: int = 100
    test_per_class: int = 50
    # stream shape
    offline_classes: int = 14
    sessions: int = 3
    novel_per_session: int = 2
    offline_fraction: float = 0.8
    unlabeled_known: int = 84
    unlabeled_novel: int = 120
    # episodes (meta-training)
    episodes: int = 12
    episode_test_per_class: int = 10
    episode_unlabeled_known: int = 120
    episode_unlabeled_novel: int = 90
    # optimization
    gamma: float = 0.1
    alpha: float = 0.001
    beta: float = 0.0001
    warmup_epochs: int = 50
    inner_steps: int = 10
    outer_steps: int = 1
    metatest_steps: int = 20
    batch_size: int = 256
    # loss
    tau: float = 0.1
    lam: float = 0.35
    epsilon: float = 0.85
    stop_gradient_on_w: bool = True
    meta_objective: str = "scl"
    # augmentation
    augment_sigma: float = 0.5
    mask_prob: float = 0.1
    # model
    encoder_widths: tuple[int, ...] = (128, 64)
    projection_widths: tuple[int, ...] = (32,)
    # evaluation
    kmeans_restarts: int = 10
    # run control
    ablation: str = "meta"
    seed: int = 0
    seeds: tuple[int, ...] = (0,)
    dataset: str = "dataset.bin"
    out_dir: str = "out"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValidationError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ValidationError("per-class sample counts must be >= 1")

    # which losses/loops each ablation arm enables
    def flags(self) -> tuple[bool, bool, bool]:
        return {
            "baseline": (False, False, False),
            "cn": (True, False, False),
            "sp": (True, True, False),
            "meta": (True, True, True),
        }[self.ablation]

    def synthetic_spec(self):
        from .data import SyntheticSpec

        return SyntheticSpec(
            num_classes=self.num_classes,
            dim=self.dim,
            samples_per_class=self.train_per_class + self.test_per_class,
            separation=self.separation,
            seed=self.seed,
        )

    def stream_config(self) -> StreamConfig:
        return StreamConfig(
            offline_classes=self.offline_classes,
            n_sessions=self.sessions,
            novel_per_session=self.novel_per_session,
            test_per_class=self.test_per_class,
            unlabeled_known_count=self.unlabeled_known,
            unlabeled_novel_count=self.unlabeled_novel,
            offline_fraction=self.offline_fraction,
        )

    def train_config(self) -> TrainConfig:
        use_nbrs, use_soft, use_meta = self.flags()
        return TrainConfig(
            gamma=self.gamma,
            alpha=self.alpha,
            beta=self.beta,
            warmup_epochs=self.warmup_epochs,
            inner_steps=self.inner_steps,
            outer_steps=self.outer_steps,
            metatest_steps=self.metatest_steps,
            batch_size=self.batch_size,
            episodes=self.episodes,
            use_neighbors=use_nbrs,
            use_soft_positiveness=use_soft,
            use_meta=use_meta,
            meta_objective=self.meta_objective,
            encoder_widths=tuple(self.encoder_widths),
            projection_widths=tuple(self.projection_widths),
            kmeans_restarts=self.kmeans_restarts,
            loss=LossConfig(
                tau=self.tau,
                lam=self.lam,
                epsilon=self.epsilon,
                stop_gradient_on_w=self.stop_gradient_on_w,
            ),
            augment=AugmentConfig(sigma=self.augment_sigma, mask_prob=self.mask_prob),
            episode=EpisodeConfig(
                n_sessions=self.sessions,
                novel_per_session=self.novel_per_session,
                unlabeled_known_count=self.episode_unlabeled_known,
                unlabeled_novel_count=self.episode_unlabeled_novel,
                test_per_class=self.episode_test_per_class,
            ),
        )

    def validate(self) -> None:
        """Cross-field validation: builds every derived config once."""
        self.synthetic_spec()
        self.stream_config()
        self.train_config()


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_FILE_KEYS = {"lambda": "lam"}  # friendlier spelling in config files


def _coerce(key: str, raw: str):
    ftype = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype == "bool":
            return _parse_bool(raw)
        if ftype.startswith("tuple"):
            return _parse_ints(raw)
        return raw
    except ValidationError:
        raise
    except ValueError as e:
        raise ValidationError(f"bad value for {key}: {raw!r} ({e})") from e


def parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ValidationError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        key = key.strip()
        key = _FILE_KEYS.get(key, key)
        if key not in _FIELD_TYPES:
            raise ValidationError(f"unknown config key {key!r}")
        out[key] = _coerce(key, raw)
    return out


def load_config_file(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, raw = line.split("=", 1)
            key = key.strip()
            key = _FILE_KEYS.get(key, key)
            if key not in _FIELD_TYPES:
                raise ValidationError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _coerce(key, raw)
    return out


def build_config(file_path=None, overrides=None) -> ExperimentConfig:
    """File values first, then overrides on top; full validation before use."""
    values = {}
    if file_path is not None:
        values.update(load_config_file(file_path))
    values.update(parse_overrides(overrides))
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg
