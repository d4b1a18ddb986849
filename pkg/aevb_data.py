"""Data classes and constants shared by training, configuration and the command line."""

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

# Random streams derived from a run seed
DATA_STREAM = 1  # batch order
NOISE_STREAM = 2  # reparametrization noise and dropout
INIT_STREAM = 3  # parameter initialization
PREPROCESS_STREAM = 4  # desk-scale subsets
EVAL_STREAM = 5
NORMALIZE_TRAIN_STREAM = 6
NORMALIZE_TEST_STREAM = 7
GENERATE_STREAM = 8
LABEL_STREAM = 9  # cvae label shuffling outside training

MODELS = ("fa", "vae", "cvae", "gmvae", "vrnn")
IMAGE_SIDE = 28


@dataclass
class RunConfig:
    """Everything needed to rerun an experiment; every field has an explicit default."""

    # Model
    model: str = "fa"  # fa | vae | cvae | gmvae | vrnn
    estimator: str = "marginalized"  # gmvae: marginalized | gumbel_logprob | gumbel_kl | sampled_y
    posterior: str = "full"  # fa: full | diagonal | fixed_diagonal
    kl: str = "analytic"  # analytic | sampled (fa, vae, cvae, vrnn)
    latent_dim: int = 2
    data_dim: int = 3  # fa only; image models derive it from the data
    num_classes: int = 10
    hidden: tuple[int, ...] = (500, 500)
    hidden_size: int = 64  # vrnn LSTM width
    dropout: float = 0.1  # vae/cvae
    temperature: float = 0.5
    label_mode: str = "true"  # cvae: true | shuffled | constant

    # Optimization
    learning_rate: float = 1e-2
    batch_size: int = 32
    steps: int = 5000
    eval_every: int = 100
    schedule: str = "joint"  # joint | alternating
    phase_length: int = 1000
    starting_phase: str = "E"  # E | M
    lr_decay: float = 1.0  # learning rate factor applied every decay_every steps of a phase
    decay_every: int = 0  # 0 disables decay
    patience: int = 0  # evaluations without improvement before stopping; 0 disables
    seed: int = 0
    eval_seed: int = 12345
    eval_batch_size: int = 500
    eval_draws: int = 1  # noise draws averaged per test example

    # Data
    data: str = "synthetic"  # synthetic | mnist
    data_dir: str = "mnist"
    train_size: Optional[int] = None
    test_size: Optional[int] = None
    synthetic_n: int = 1000
    binarize_threshold: float = 127.5

    # Output
    out: str = "runs/default"
    predictive_samples: int = 0  # fa: points drawn from the fitted model at each evaluation


CONFIG_KEYS = tuple(f.name for f in fields(RunConfig))


@dataclass
class TrainSchedule:
    """Which parameter sets are updated at each step, and how often to evaluate."""

    total_steps: int
    batch_size: int
    eval_every: int
    seed: int
    mode: str = "joint"  # joint | alternating
    phase_length: int = 1000
    starting_phase: str = "E"
    patience: int = 0
    eval_seed: int = 12345
    eval_batch_size: int = 500
    eval_draws: int = 1
    lr_decay: float = 1.0
    decay_every: int = 0

    def __post_init__(self):
        if self.mode not in ("joint", "alternating"):
            raise ValueError(f"Unknown schedule mode: {self.mode}")
        if self.starting_phase not in ("E", "M"):
            raise ValueError(f"Unknown starting phase: {self.starting_phase}")
        if self.phase_length < 1:
            raise ValueError(f"phase_length must be at least 1, got {self.phase_length}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be at least 1, got {self.eval_every}")
        if self.total_steps < 0:
            raise ValueError(f"total_steps must be non-negative, got {self.total_steps}")
        if self.eval_draws < 1:
            raise ValueError(f"eval_draws must be at least 1, got {self.eval_draws}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.decay_every < 0:
            raise ValueError(f"decay_every must be non-negative, got {self.decay_every}")

    def phase(self, step: int) -> str:
        """Phase of update number step (1-based): "joint", "E" (phi only) or "M" (theta only)."""
        if self.mode == "joint":
            return "joint"
        other = "M" if self.starting_phase == "E" else "E"
        return self.starting_phase if ((step - 1) // self.phase_length) % 2 == 0 else other

    def learning_rate(self, base: float, step: int) -> float:
        """Step decay restarted at every phase boundary; joint runs count from step 1."""
        if self.decay_every == 0:
            return base
        into_phase = (step - 1) if self.mode == "joint" else (step - 1) % self.phase_length
        return base * self.lr_decay ** (into_phase // self.decay_every)

    @classmethod
    def from_config(cls, config: RunConfig) -> "TrainSchedule":
        return cls(
            total_steps=config.steps,
            batch_size=config.batch_size,
            eval_every=config.eval_every,
            seed=config.seed,
            mode=config.schedule,
            phase_length=config.phase_length,
            starting_phase=config.starting_phase,
            patience=config.patience,
            eval_seed=config.eval_seed,
            eval_batch_size=config.eval_batch_size,
            eval_draws=config.eval_draws,
            lr_decay=config.lr_decay,
            decay_every=config.decay_every,
        )


@dataclass(frozen=True)
class Split:
    """Examples along the first axis, with optional integer labels."""

    x: np.ndarray
    labels: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.x.shape[0])

    def take(self, indices: np.ndarray) -> "Split":
        return Split(self.x[indices], None if self.labels is None else self.labels[indices])


METRICS_COLUMNS = ("step", "split", "elbo", "evidence", "cond_entropy", "cluster_acc")


@dataclass(frozen=True)
class MetricsRow:
    step: int
    split: str
    elbo: float
    evidence: Optional[float] = None  # fa only
    cond_entropy: Optional[float] = None  # gmvae only
    cluster_acc: Optional[float] = None  # gmvae with labels
    elbo_se: float = 0.0  # standard error of the per-example estimates; not serialized
    gap: Optional[float] = None  # fa: exact KL to the true posterior; not serialized

    def cells(self) -> list[str]:
        return [str(self.step), self.split] + [
            "" if value is None else format_float(value)
            for value in (self.elbo, self.evidence, self.cond_entropy, self.cluster_acc)
        ]


def format_float(value: float) -> str:
    return repr(float(value))


@dataclass
class MetricsLog:
    rows: list[MetricsRow] = field(default_factory=list)

    def append(self, row: MetricsRow) -> None:
        if self.rows and row.step < self.rows[-1].step:
            raise ValueError(f"MetricsLog: step {row.step} precedes {self.rows[-1].step}")
        self.rows.append(row)

    def last(self) -> MetricsRow:
        return self.rows[-1]

    def to_csv(self) -> str:
        lines = [",".join(METRICS_COLUMNS)] + [",".join(row.cells()) for row in self.rows]
        return "\n".join(lines) + "\n"


# Full-size runs; "-desk" variants shrink data and widths.
PRESETS: dict[str, dict[str, object]] = {
    "fa-experiment-1": {
        "model": "fa", "latent_dim": 2, "data_dim": 3, "batch_size": 32, "learning_rate": 1e-2,
        "steps": 5000, "eval_every": 50, "synthetic_n": 1000, "seed": 0,
    },
    "fa-experiment-2": {
        "model": "fa", "latent_dim": 2, "data_dim": 3, "batch_size": 32, "learning_rate": 1e-2,
        "steps": 4000, "eval_every": 50, "schedule": "alternating", "phase_length": 1000,
        "starting_phase": "E", "lr_decay": 0.7, "decay_every": 200, "eval_draws": 100, "synthetic_n": 1000, "seed": 0,
    },
    "vae": {
        "model": "vae", "data": "mnist", "latent_dim": 20, "hidden": (500, 500), "dropout": 0.1,
        "batch_size": 100, "learning_rate": 3e-4, "steps": 60000, "eval_every": 600, "seed": 0,
    },
    "vae-desk": {
        "model": "vae", "data": "mnist", "latent_dim": 20, "hidden": (128,), "dropout": 0.1,
        "batch_size": 100, "learning_rate": 1e-3, "steps": 400, "eval_every": 10,
        "train_size": 1000, "test_size": 500, "seed": 0,
    },
    "cvae": {
        "model": "cvae", "data": "mnist", "latent_dim": 20, "hidden": (500, 500), "dropout": 0.1,
        "batch_size": 100, "learning_rate": 3e-4, "steps": 60000, "eval_every": 600, "seed": 0,
    },
    "cvae-desk": {
        "model": "cvae", "data": "mnist", "latent_dim": 20, "hidden": (128,), "dropout": 0.1,
        "batch_size": 100, "learning_rate": 1e-3, "steps": 400, "eval_every": 10,
        "train_size": 1000, "test_size": 500, "seed": 0,
    },
    "gmvae": {
        "model": "gmvae", "data": "mnist", "num_classes": 10, "latent_dim": 20, "hidden": (500, 500),
        "batch_size": 100, "learning_rate": 1e-3, "steps": 60000, "eval_every": 600,
        "estimator": "marginalized", "temperature": 0.5, "seed": 0,
    },
    "gmvae-desk": {
        "model": "gmvae", "data": "mnist", "num_classes": 10, "latent_dim": 10, "hidden": (128,),
        "batch_size": 100, "learning_rate": 1e-3, "steps": 600, "eval_every": 20,
        "estimator": "marginalized", "train_size": 2000, "test_size": 500, "seed": 0,
    },
    "vrnn": {
        "model": "vrnn", "data": "mnist", "latent_dim": 2, "hidden_size": 64, "hidden": (64,),
        "batch_size": 100, "learning_rate": 1e-3, "steps": 60000, "eval_every": 600, "seed": 0,
    },
    "vrnn-desk": {
        "model": "vrnn", "data": "mnist", "latent_dim": 2, "hidden_size": 32, "hidden": (32,),
        "batch_size": 100, "learning_rate": 1e-3, "steps": 400, "eval_every": 10,
        "train_size": 1000, "test_size": 500, "seed": 0,
    },
}
