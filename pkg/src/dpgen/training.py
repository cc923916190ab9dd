"""Teacher-ensemble training loop for the student generator.

Each iteration: the generator produces a fake batch, every teacher takes a
discriminator step on its own shard and emits clamped perturbations for the
fakes, the perturbations are aggregated privately, and the generator regresses
toward ``fake + aggregated perturbation``.
"""

from __future__ import annotations

import configparser
import logging
import math
import warnings
from dataclasses import dataclass, field, fields, replace

import numpy as np

from dpgen.accountant import PrivacyLedger, to_dp
from dpgen.aggregator import AggregationOutcome, BinGrid, aggregate
from dpgen.data import TabularDataset
from dpgen.neural import (
    Adam,
    CondInputs,
    Mlp,
    adversarial_perturbation,
    generator_step,
    make_discriminator,
    make_generator,
    teacher_step,
)
from dpgen.projection import make_projection
from dpgen.rng import derive_rng, derive_seed

log = logging.getLogger(__name__)


class BudgetExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    num_teachers: int = 10
    batch_size: int = 16
    bins: int = 10
    clip: float = 1e-4
    sigma1: float = 8.0
    sigma2: float = 4.0
    threshold: float = 0.5
    proj_dims: int = 4
    learning_rate: float = 1e-3
    iterations: int = 1000
    epsilon_target: float = math.inf
    delta: float = 1e-5
    seed: int = 0
    conditional: bool = True
    noise_dim: int = 8
    hidden: int = 64
    teacher_steps: int = 1
    laplace_epsilon: float = 0.01
    back_projection: str = "transpose"
    checkpoint_every: int = 0
    # test-only: aggregate without noise and without accounting
    noiseless: bool = False

    def __post_init__(self):
        if self.num_teachers < 2:
            raise ValueError("need at least 2 teachers")
        for name in ("batch_size", "proj_dims", "iterations", "noise_dim", "hidden", "teacher_steps"):
            if getattr(self, name) < (0 if name == "iterations" else 1):
                raise ValueError(f"{name} must be positive")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        for name in ("clip", "learning_rate", "laplace_epsilon", "epsilon_target"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.noiseless and not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ValueError("sigma1 and sigma2 must be positive (set noiseless for the test path)")
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold fraction must lie in (0, 1]")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")

    # -- flat key = value files -----------------------------------------
    @classmethod
    def from_text(cls, text: str, base: "TrainConfig | None" = None) -> "TrainConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        parser.optionxform = str
        parser.read_string("[train]\n" + text)
        values = dict(parser["train"])
        base = base or cls()
        if "preset" in values:
            base = PRESETS[values.pop("preset")]
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            default = getattr(base, key)
            if isinstance(default, bool):
                kwargs[key] = parser["train"].getboolean(key)
            elif isinstance(default, int):
                kwargs[key] = int(raw)
            elif isinstance(default, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw.strip()
        return replace(base, **kwargs)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else v}")
        return "\n".join(lines) + "\n"


# Named presets. "toy" is the desk-scale default; the others carry the
# published large-scale hyperparameters.
PRESETS = {
    "toy": TrainConfig(),
    "mnist-eps1": TrainConfig(
        num_teachers=4000, batch_size=15, sigma1=3000.0, sigma2=1000.0, proj_dims=10, epsilon_target=1.0
    ),
    "mnist-eps10": TrainConfig(
        num_teachers=2000, batch_size=30, sigma1=600.0, sigma2=100.0, proj_dims=10, epsilon_target=10.0
    ),
    "credit": TrainConfig(
        num_teachers=2100, batch_size=32, sigma1=1500.0, sigma2=600.0, proj_dims=5, epsilon_target=0.99
    ),
}


class Shard:
    """One teacher's private slice of the data; logs which teacher reads it."""

    def __init__(self, shard_id: int, features: np.ndarray, labels: np.ndarray | None):
        self.shard_id = shard_id
        self._features = features
        self._labels = labels
        self.access_log: list[int] = []

    def __len__(self):
        return len(self._features)

    def sample(self, size: int, rng, reader: int):
        self.access_log.append(reader)
        idx = rng.choice(len(self._features), size=size, replace=len(self._features) < size)
        labels = None if self._labels is None else self._labels[idx]
        return self._features[idx], labels


def partition(num_records: int, n: int, seed: int, labels=None) -> list[np.ndarray]:
    """Shuffle then deal round-robin into ``n`` disjoint index shards.

    With ``labels`` the shuffle is done within each class and classes are dealt
    one after another, so every shard sees every class where counts permit.
    """
    if n < 1 or n > num_records:
        raise ValueError(f"cannot split {num_records} records into {n} shards")
    rng = derive_rng(seed, "partition")
    if labels is None:
        order = rng.permutation(num_records)
    else:
        labels = np.asarray(labels)
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    return [np.sort(order[i::n]) for i in range(n)]


def laplace_counts(counts, epsilon: float, rng) -> np.ndarray:
    """Counts plus Laplace(1/epsilon) noise (sensitivity 1 under add/remove)."""
    counts = np.asarray(counts, dtype=float)
    return counts + rng.laplace(0.0, 1.0 / epsilon, size=counts.shape)


def noisy_class_ratio(labels, epsilon: float, rng, ledger: PrivacyLedger | None = None, num_classes=None) -> np.ndarray:
    """Class frequencies released with the Laplace mechanism.

    Noisy counts are clamped at 0 and renormalized. ``epsilon=inf`` disables
    the noise (test path) and cannot be charged.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if not labels.size:
        raise ValueError("need at least one label")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    c = num_classes or int(labels.max()) + 1
    counts = np.bincount(labels, minlength=c).astype(float)
    if math.isfinite(epsilon):
        if ledger is not None:
            ledger.charge_laplace(epsilon, "class-ratio")
        counts = laplace_counts(counts, epsilon, rng)
    elif ledger is not None:
        raise ValueError("a noise-free class ratio cannot be charged")
    counts = np.maximum(counts, 0.0)
    if counts.sum() <= 0:
        warnings.warn("all noisy class counts clamped to zero; using uniform ratios")
        return np.full(c, 1.0 / c)
    return counts / counts.sum()


@dataclass
class SyntheticBatch:
    """Generated rows (scaled units) and their class labels.

    During training ``x_hat`` holds the perturbed regression targets.
    """

    features: np.ndarray
    labels: np.ndarray | None
    x_hat: np.ndarray | None = None

    def __len__(self):
        return len(self.features)


def _one_hot(labels, c):
    return None if labels is None or not c else np.eye(c)[labels]


def generate(generator: Mlp, count: int, class_ratios=None, seed: int = 0) -> SyntheticBatch:
    """Sample ``count`` records; labels are drawn from ``class_ratios``."""
    rng = derive_rng(seed, "generate")
    c = generator.cond_dim
    if count == 0:
        return SyntheticBatch(np.zeros((0, generator.sizes[-1])), np.zeros(0, dtype=np.int64) if c else None)
    labels = None
    if c:
        ratios = np.asarray(class_ratios, dtype=float)
        if ratios.shape != (c,) or not math.isclose(ratios.sum(), 1.0, rel_tol=1e-9):
            raise ValueError("class_ratios must be a probability vector over the generator's classes")
        labels = rng.choice(c, size=count, p=ratios)
    z = rng.standard_normal((count, generator.sizes[0]))
    return SyntheticBatch(generator(z, _one_hot(labels, c)), labels)


@dataclass
class IterationMetrics:
    iteration: int
    loss: float
    pass_rate: float
    mean_vote_gap: float
    epsilon: float

    def log_line(self) -> str:
        return (
            f"iter={self.iteration} loss={self.loss!r} pass_rate={self.pass_rate!r} "
            f"vote_gap={self.mean_vote_gap!r} epsilon={self.epsilon!r}"
        )


@dataclass
class RunState:
    ledger: PrivacyLedger
    delta: float
    noiseless: bool = False
    iteration: int = 0
    metrics: list[IterationMetrics] = field(default_factory=list)

    @property
    def epsilon(self) -> float:
        if self.noiseless:
            return math.inf
        return self.ledger.guarantee(self.delta).epsilon

    def report(self) -> dict:
        doc = self.ledger.report(self.delta)
        if self.noiseless:
            doc["final"]["epsilon"] = None
        return doc

    def log_text(self) -> str:
        return "".join(m.log_line() + "\n" for m in self.metrics)


@dataclass
class TrainResult:
    generator: Mlp
    state: RunState
    class_ratios: np.ndarray | None
    teachers: list[Mlp]
    shards: list[Shard]
    last_outcome: AggregationOutcome | None = None

    @property
    def report(self) -> dict:
        return self.state.report()

    def __iter__(self):
        return iter((self.generator, self.state, self.report))


def _worst_case_epsilon(ledger: PrivacyLedger, queries: int, cfg: TrainConfig) -> float:
    """Epsilon if the next ``queries`` dimensions all pass and pay the fallback GNMax cost."""
    curve = ledger.composed()
    lam = np.asarray(curve.orders)
    eps = np.asarray(curve.epsilons) + queries * (lam / (2 * cfg.sigma1**2) + lam / cfg.sigma2**2)
    return to_dp(type(curve)(curve.orders, tuple(eps)), cfg.delta).epsilon + ledger.laplace_epsilon


def train(config: TrainConfig, dataset: TabularDataset, checkpoint_dir=None, on_iteration=None) -> TrainResult:
    """Train a generator on ``dataset`` (features already scaled to [-1, 1])."""
    cfg = config
    if not len(dataset):
        raise ValueError("dataset is empty")
    conditional = cfg.conditional and dataset.labels is not None
    c = dataset.num_classes if conditional else 0
    d = dataset.features.shape[1]
    k = min(cfg.proj_dims, d)

    ledger = PrivacyLedger()
    outcome = None
    state = RunState(ledger, cfg.delta, cfg.noiseless)

    ratios = None
    if conditional:
        lap_eps = math.inf if cfg.noiseless else cfg.laplace_epsilon
        ratios = noisy_class_ratio(
            dataset.labels, lap_eps, derive_rng(cfg.seed, "laplace"), None if cfg.noiseless else ledger, c
        )
        if not cfg.noiseless and ledger.laplace_epsilon >= cfg.epsilon_target:
            raise BudgetExhausted(
                f"class-ratio release alone costs {ledger.laplace_epsilon} >= target {cfg.epsilon_target}"
            )

    labels = dataset.labels if conditional else None
    shard_idx = partition(len(dataset), cfg.num_teachers, cfg.seed, labels)
    shards = [
        Shard(i, dataset.features[idx], None if labels is None else labels[idx]) for i, idx in enumerate(shard_idx)
    ]

    init_rng = derive_rng(cfg.seed, "init")
    generator = make_generator(cfg.noise_dim, d, c, (cfg.hidden, cfg.hidden), init_rng)
    teachers = [make_discriminator(d, c, (cfg.hidden, cfg.hidden), init_rng) for _ in range(cfg.num_teachers)]
    g_opt = Adam(cfg.learning_rate)
    t_opts = [Adam(cfg.learning_rate) for _ in teachers]
    t_rngs = [derive_rng(cfg.seed, "teacher", i) for i in range(cfg.num_teachers)]
    sample_rng = derive_rng(cfg.seed, "sampling")
    noise_rng = derive_rng(cfg.seed, "noise")
    grid = BinGrid(cfg.clip, cfg.bins)
    sigma1, sigma2 = (0.0, 0.0) if cfg.noiseless else (cfg.sigma1, cfg.sigma2)
    m = cfg.batch_size

    for it in range(cfg.iterations):
        if not cfg.noiseless and _worst_case_epsilon(ledger, m * k, cfg) > cfg.epsilon_target:
            log.info("stopping before iteration %d: next query batch could exceed epsilon %g", it, cfg.epsilon_target)
            break

        # (1) fakes
        fake_labels = sample_rng.choice(c, size=m, p=ratios) if c else None
        z = CondInputs(sample_rng.standard_normal((m, cfg.noise_dim)), _one_hot(fake_labels, c))
        fakes = generator(z.z, z.labels)

        # (2) teachers: local steps on own shard, then perturbations on the shared fakes
        deltas = np.empty((cfg.num_teachers, m, d))
        for t, (teacher, opt, shard) in enumerate(zip(teachers, t_opts, shards)):
            for _ in range(cfg.teacher_steps):
                real_x, real_y = shard.sample(m, t_rngs[t], reader=t)
                teacher_step(teacher, real_x, fakes, opt, _one_hot(real_y, c), z.labels)
            deltas[t] = adversarial_perturbation(teacher, fakes, z.labels, cfg.clip)

        # (3) private aggregation
        proj = make_projection(d, k, derive_seed(cfg.seed, "projection", it), cfg.back_projection)
        outcome = aggregate(
            deltas,
            grid,
            proj,
            cfg.threshold,
            sigma1,
            sigma2,
            None if cfg.noiseless else ledger,
            noise_rng,
            query_prefix=f"it{it}/",
        )

        # (4) generator regression toward the perturbed fakes
        x_hat = fakes + outcome.gradient
        try:
            loss = generator_step(generator, z, x_hat, g_opt)
        except FloatingPointError:
            if checkpoint_dir is not None:
                generator.save(f"{checkpoint_dir}/generator-abort-{it}.json")
            raise

        state.iteration = it + 1
        metrics = IterationMetrics(it, loss, outcome.pass_rate, outcome.mean_vote_gap, state.epsilon)
        state.metrics.append(metrics)
        if on_iteration is not None:
            on_iteration(metrics)
        if checkpoint_dir is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            generator.save(f"{checkpoint_dir}/generator-{it + 1}.json")

    if state.iteration == 0 and cfg.iterations:
        log.warning("epsilon target %g admits no training iteration; returning the initial generator", cfg.epsilon_target)
    return TrainResult(generator, state, ratios, teachers, shards, outcome)
