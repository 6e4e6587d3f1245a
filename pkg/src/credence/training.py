"""Unsupervised rule learning on the synthetic 11-bit world.

The world has eleven bits: the first bit usually agrees with the majority of
the middle nine, the last bit usually disagrees with it, and every recorded
observation hides either the first or the last bit.  Training maximizes the
likelihood of the observations under the rejection-sampling generator: the
loss is the negative mean log keep probability plus the mean keep
probability of prior samples divided by a slowly refreshed estimate of its
expectation.

Partial observations enter the likelihood as the sum of the keep
probabilities of their completions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Mlp, adam_step
from .engine import (
    DecoderMap,
    IdentityMap,
    LatentSpace,
    NbrModel,
    Rule,
    SliceNetworkRule,
    UniformPrior,
)

UNKNOWN = -1

KEEP_FLOOR = 1e-30
ALPHA_FLOOR = 1e-12
ALPHA_SAMPLE_COUNT = 1 << 13
EXACT_ALPHA_LIMIT = 1 << 16


class VanishedKeepProbabilityError(RuntimeError):
    """An observation's keep probability underflowed the guard floor."""


class DivergenceError(RuntimeError):
    """The training loss became non-finite."""


@dataclass(frozen=True)
class PartialObservation:
    """An observation vector with some bits unknown."""

    bits: tuple

    def __post_init__(self):
        known = sum(1 for b in self.bits if b is not None)
        unknown = len(self.bits) - known
        if known == 0:
            raise ValueError("at least one bit must be observed")
        if unknown > 8:
            raise ValueError("at most 8 bits may be unknown")
        for b in self.bits:
            if b not in (0, 1, None):
                raise ValueError("bits must be 0, 1, or None")

    @classmethod
    def from_array(cls, row: np.ndarray) -> "PartialObservation":
        return cls(tuple(None if v == UNKNOWN else int(v) for v in row))

    @classmethod
    def from_line(cls, line: str) -> "PartialObservation":
        mapping = {"0": 0, "1": 1, "?": None}
        try:
            return cls(tuple(mapping[ch] for ch in line.strip()))
        except KeyError as exc:
            raise ValueError(f"bad dataset character {exc}") from exc

    def to_line(self) -> str:
        return "".join("?" if b is None else str(b) for b in self.bits)

    def to_array(self) -> np.ndarray:
        return np.array([UNKNOWN if b is None else b for b in self.bits], dtype=np.int8)

    def completions(self) -> np.ndarray:
        """All full observations consistent with the known bits."""
        unknown_positions = [i for i, b in enumerate(self.bits) if b is None]
        base = np.array([0 if b is None else b for b in self.bits], dtype=np.uint8)
        out = np.tile(base, (1 << len(unknown_positions), 1))
        for j, pos in enumerate(unknown_positions):
            fill = (np.arange(len(out)) >> j) & 1
            out[:, pos] = fill
        return out


class ObservationSet:
    """A dataset of partial observations stored as one int8 array."""

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=np.int8)
        if data.ndim != 2:
            raise ValueError("expected a 2-d array of observations")
        self.data = data

    def __len__(self):
        return len(self.data)

    def __getitem__(self, index) -> PartialObservation:
        return PartialObservation.from_array(self.data[index])

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for row in self.data:
                fh.write(PartialObservation.from_array(row).to_line() + "\n")

    @classmethod
    def read(cls, path) -> "ObservationSet":
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(PartialObservation.from_line(line).to_array())
        return cls(np.stack(rows))


@dataclass(frozen=True)
class SyntheticWorldConfig:
    """Generation knobs for the 11-bit world."""

    count: int = 50_000
    first_fraction: float = 0.5
    first_inversion: float = 0.10
    last_inversion: float = 0.80
    seed: int = 0

    def __post_init__(self):
        for rate in (self.first_fraction, self.first_inversion, self.last_inversion):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("rates must lie in [0, 1]")


def generate_world(config: SyntheticWorldConfig) -> ObservationSet:
    """Sample partial observations of the synthetic world.

    Middle bits are independent fair coins; the first bit matches the
    majority of the middle nine except at the first inversion rate, the last
    bit likewise except at the last inversion rate.  Each record then hides
    either the last bit (a first-ten observation) or the first bit.
    """
    rng = np.random.default_rng(config.seed)
    n = config.count
    mid = rng.integers(0, 2, size=(n, 9), dtype=np.int8)
    majority = (mid.sum(axis=1) * 2 > 9).astype(np.int8)
    first = majority ^ (rng.random(n) < config.first_inversion)
    last = majority ^ (rng.random(n) < config.last_inversion)
    sees_first_ten = rng.random(n) < config.first_fraction
    data = np.empty((n, 11), dtype=np.int8)
    data[:, 0] = first
    data[:, 1:10] = mid
    data[:, 10] = last
    data[sees_first_ten, 10] = UNKNOWN
    data[~sees_first_ten, 0] = UNKNOWN
    return ObservationSet(data)


def expand_completions(rows: np.ndarray) -> tuple:
    """Completions of a batch plus the 0/1 matrix summing them per row."""
    pieces = []
    owners = []
    for i, row in enumerate(rows):
        comp = PartialObservation.from_array(row).completions()
        pieces.append(comp)
        owners.extend([i] * len(comp))
    completions = np.concatenate(pieces).astype(np.float64)
    owners = np.asarray(owners)
    seg = np.zeros((len(rows), len(completions)))
    seg[owners, np.arange(len(completions))] = 1.0
    return completions, seg


@dataclass
class TrainHyper:
    """Optimizer and schedule settings for rule training.

    The learning rate decays linearly to ``final_learning_rate`` between
    ``decay_start`` and ``max_steps``; batch noise otherwise keeps single
    points near the rule boundaries oscillating, and query maxima are
    sensitive to every one of them.
    """

    learning_rate: float = 2e-3
    final_learning_rate: float = 1e-4
    decay_start: int = 25_000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    prior_batch: int = 64
    exact_prior_term: bool = False
    alpha_refresh_period: int = 100
    max_steps: int = 40_000
    convergence_window: int = 500
    convergence_rtol: float = 1e-5
    hidden_width: int = 32
    seed: int = 0

    def learning_rate_at(self, step: int) -> float:
        if step < self.decay_start or self.max_steps <= self.decay_start:
            return self.learning_rate
        frac = (step - self.decay_start) / (self.max_steps - self.decay_start)
        return self.learning_rate + frac * (self.final_learning_rate - self.learning_rate)


@dataclass
class TrainerState:
    """Everything a training run mutates.

    Rule weights live as unconstrained logits and are squashed through a
    sigmoid whenever beliefs are needed, which keeps them inside (0, 1)
    without projection.
    """

    networks: list
    slices: list
    logits: np.ndarray
    adam: AdamState
    alpha: float
    step: int = 0
    input_transform: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def beliefs(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.logits))

    def rule_inputs(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        return xs if self.input_transform is None else self.input_transform(xs)

    def keep_probabilities(self, xs: np.ndarray) -> np.ndarray:
        """Plain numpy keep probabilities for full observations."""
        phi = self.rule_inputs(xs)
        if not self.networks:
            return np.ones(len(xs))
        values = np.stack(
            [net.forward(phi[:, lo:hi])[:, 0] for net, (lo, hi) in zip(self.networks, self.slices)]
        )
        beliefs = self.beliefs
        out = np.zeros(len(xs))
        for selector in product((0, 1), repeat=len(self.networks)):
            weight = 1.0
            for b, y in zip(beliefs, selector):
                weight *= b if y else 1.0 - b
            chosen = [values[i] for i, y in enumerate(selector) if y]
            mu = np.minimum.reduce(chosen) if chosen else np.ones(len(xs))
            out += weight * mu
        return out

    def parameters(self) -> list:
        params = []
        for net in self.networks:
            params.extend(net.parameters)
        params.append(self.logits)
        return params


def initial_state(hyper: TrainHyper, slices=((0, 10), (1, 11))) -> TrainerState:
    rng = np.random.default_rng(hyper.seed)
    networks = [
        Mlp([hi - lo, hyper.hidden_width, hyper.hidden_width, 1], rng=rng)
        for lo, hi in slices
    ]
    logits = np.zeros(len(slices))
    params = []
    for net in networks:
        params.extend(net.parameters)
    params.append(logits)
    return TrainerState(
        networks=networks,
        slices=list(slices),
        logits=logits,
        adam=AdamState.for_parameters(params),
        alpha=1.0,
    )


def partial_keep_probability(model: NbrModel, observation: PartialObservation) -> float:
    """Keep probability of a partial observation: the sum over completions."""
    completions = observation.completions()
    return float(model.keep_probability_batch(completions).sum())


def refresh_alpha(state: TrainerState, prior, rng: Optional[np.random.Generator] = None) -> float:
    """Re-estimate the expected keep probability under the prior.

    Exact enumeration when the observation space is small enough and the
    prior carries an exact mass table; otherwise a fixed-size sample mean.
    The result is floored away from zero and stored on the state.
    """
    mass = getattr(prior, "mass_table", None)
    if mass is not None and (1 << prior.dim) <= EXACT_ALPHA_LIMIT:
        points = np.asarray(
            (np.arange(1 << prior.dim)[:, None] >> np.arange(prior.dim)[None, :]) & 1,
            dtype=np.uint8,
        )
        keep = state.keep_probabilities(points)
        alpha = float(np.asarray(mass) @ keep)
    else:
        rng = rng or np.random.default_rng(0)
        xs = prior.sample(rng, ALPHA_SAMPLE_COUNT)
        alpha = float(state.keep_probabilities(xs).mean())
    state.alpha = max(alpha, ALPHA_FLOOR)
    return state.alpha


def _keep_var(state: TrainerState, param_vars, xs: np.ndarray) -> ad.Var:
    """Keep probabilities of full observations as a graph node, shape (M, 1)."""
    phi = state.rule_inputs(xs)
    offset = 0
    rule_outputs = []
    for net, (lo, hi) in zip(state.networks, state.slices):
        count = len(net.parameters)
        rule_outputs.append(net.forward_var(phi[:, lo:hi], param_vars[offset : offset + count]))
        offset += count
    logit_var = param_vars[-1]
    k = len(state.networks)
    beliefs = [ad.sigmoid(ad.vsum(ad.mul(logit_var, _one_hot(i, k)))) for i in range(k)]
    total = None
    for selector in product((0, 1), repeat=k):
        weight = None
        for i, y in enumerate(selector):
            factor = beliefs[i] if y else ad.sub(1.0, beliefs[i])
            weight = factor if weight is None else ad.mul(weight, factor)
        chosen = [rule_outputs[i] for i, y in enumerate(selector) if y]
        if not chosen:
            mu = ad.Var(np.ones((len(xs), 1)))
        elif len(chosen) == 1:
            mu = chosen[0]
        else:
            mu = ad.vmin(ad.stack(chosen, axis=0), axis=0)
        term = ad.mul(weight, mu) if weight is not None else mu
        total = term if total is None else ad.add(total, term)
    return total


def _one_hot(i, k):
    hot = np.zeros(k)
    hot[i] = 1.0
    return hot


def loss_batch(
    state: TrainerState,
    observations: np.ndarray,
    prior_samples: np.ndarray,
    use_log_expectation: bool = False,
):
    """Training loss and gradients for one batch.

    The first term is the negative mean log keep probability of the
    observations (summed over completions of partial ones); the second is
    the mean keep probability of prior samples divided by the stored alpha.
    With ``use_log_expectation`` the second term is the log of the mean
    instead, which is the exact-likelihood form used by the gradient
    identity check.
    """
    completions, seg = expand_completions(np.asarray(observations))
    params = state.parameters()
    param_vars = [ad.Var(p) for p in params]
    keep_completions = _keep_var(state, param_vars, completions)
    keep_obs = ad.matmul(seg, keep_completions)
    if float(keep_obs.value.min()) < KEEP_FLOOR:
        raise VanishedKeepProbabilityError("an observation's keep probability vanished")
    first = ad.mul(ad.vmean(ad.log(ad.clamp(keep_obs, KEEP_FLOOR, None))), -1.0)
    keep_prior = ad.vmean(_keep_var(state, param_vars, np.asarray(prior_samples, dtype=np.float64)))
    if use_log_expectation:
        second = ad.log(ad.clamp(keep_prior, KEEP_FLOOR, None))
    else:
        second = ad.mul(keep_prior, 1.0 / state.alpha)
    loss = ad.add(first, second)
    ad.backward(loss)
    return loss.item(), [pv.grad for pv in param_vars]


@dataclass
class TrainReport:
    steps: int
    final_loss: float
    beliefs: np.ndarray
    alpha: float
    loss_history: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)


def _identity_model(state: TrainerState, dim: int) -> NbrModel:
    rules = tuple(
        SliceNetworkRule(net, lo, hi)
        for net, (lo, hi) in zip(state.networks, state.slices)
    )
    return NbrModel(LatentSpace(dim), IdentityMap(dim), rules, tuple(state.beliefs))


def train_rules(
    data: ObservationSet,
    hyper: TrainHyper,
    state: Optional[TrainerState] = None,
    prior=None,
) -> tuple:
    """Run the optimization loop; returns the final state and a report."""
    dim = data.dim
    prior = prior or UniformPrior(dim)
    state = state or initial_state(hyper)
    rng = np.random.default_rng(hyper.seed + 1)
    refresh_alpha(state, prior, rng)
    loss_history = []
    window = hyper.convergence_window
    order = rng.permutation(len(data))
    cursor = 0
    # With the exact prior term, every enumeration point feels the same
    # downward pressure every step; sampling noise otherwise lets stray
    # points drift up between visits, and query maxima amplify each one.
    full_support = None
    if hyper.exact_prior_term:
        full_support = np.asarray(
            (np.arange(1 << dim)[:, None] >> np.arange(dim)[None, :]) & 1, dtype=np.uint8
        )
    for step in range(hyper.max_steps):
        if cursor + hyper.batch_size > len(order):
            order = rng.permutation(len(data))
            cursor = 0
        batch = data.data[order[cursor : cursor + hyper.batch_size]]
        cursor += hyper.batch_size
        if full_support is not None:
            prior_batch = full_support
        else:
            prior_batch = prior.sample(rng, hyper.prior_batch)
        loss, grads = loss_batch(state, batch, prior_batch)
        if not np.isfinite(loss):
            raise DivergenceError(f"loss diverged at step {step}")
        params = state.parameters()
        adam_step(
            params,
            grads,
            state.adam,
            lr=hyper.learning_rate_at(state.step),
            beta1=hyper.beta1,
            beta2=hyper.beta2,
            eps=hyper.eps,
        )
        state.step += 1
        loss_history.append(loss)
        if (step + 1) % hyper.alpha_refresh_period == 0:
            refresh_alpha(state, prior, rng)
        if len(loss_history) >= 2 * window and (step + 1) % window == 0:
            recent = float(np.mean(loss_history[-window:]))
            previous = float(np.mean(loss_history[-2 * window : -window]))
            if abs(previous - recent) < hyper.convergence_rtol * max(abs(previous), 1e-12):
                break
    report = TrainReport(
        steps=state.step,
        final_loss=loss_history[-1] if loss_history else float("nan"),
        beliefs=state.beliefs.copy(),
        alpha=state.alpha,
        loss_history=loss_history,
    )
    return state, report


def train_synthetic(config: SyntheticWorldConfig, hyper: TrainHyper) -> tuple:
    """Learn the two slice networks and their weights from generated data."""
    data = generate_world(config)
    state, report = train_rules(data, hyper)
    model = _identity_model(state, data.dim)
    report.extras["variant"] = "identity"
    return model, report


# -- autoencoder variant ------------------------------------------------------


@dataclass
class AutoencoderHyper:
    latent_dim: int = 8
    hidden_width: int = 32
    learning_rate: float = 3e-3
    steps: int = 4000
    batch_size: int = 256
    seed: int = 0
    required_bit_accuracy: float = 0.99
    binarize_latent: bool = True
    binarize_output: bool = True


def train_autoencoder(completions: np.ndarray, hyper: AutoencoderHyper) -> tuple:
    """Fit an encoder/decoder pair on full observations; returns accuracy too."""
    rng = np.random.default_rng(hyper.seed)
    dim = completions.shape[1]
    encoder = Mlp([dim, hyper.hidden_width, hyper.latent_dim], rng=rng)
    decoder = Mlp([hyper.latent_dim, hyper.hidden_width, dim], rng=rng)
    params = encoder.parameters + decoder.parameters
    adam = AdamState.for_parameters(params)
    xs = completions.astype(np.float64)
    for _ in range(hyper.steps):
        batch = xs[rng.integers(0, len(xs), size=hyper.batch_size)]
        param_vars = [ad.Var(p) for p in params]
        n_enc = len(encoder.parameters)
        latent = encoder.forward_var(batch, param_vars[:n_enc])
        recon = decoder.forward_var(latent, param_vars[n_enc:])
        clipped = ad.clamp(recon, 1e-7, 1.0 - 1e-7)
        bce = ad.mul(
            ad.vmean(
                ad.add(
                    ad.mul(batch, ad.log(clipped)),
                    ad.mul(1.0 - batch, ad.log(ad.sub(1.0, clipped))),
                )
            ),
            -1.0,
        )
        ad.backward(bce)
        adam_step(params, [pv.grad for pv in param_vars], adam, lr=hyper.learning_rate)
    recon_bits = decoder.forward(encoder.forward(xs)) >= 0.5
    accuracy = float((recon_bits == (xs >= 0.5)).mean())
    return encoder, decoder, accuracy


def surrogate_transform(encoder: Mlp, decoder: Mlp, hyper: AutoencoderHyper):
    """Observation preprocessor that routes rule inputs through the bottleneck."""

    def phi(xs: np.ndarray) -> np.ndarray:
        latent = encoder.forward(np.asarray(xs, dtype=np.float64))
        if hyper.binarize_latent:
            latent = (latent >= 0.5).astype(np.float64)
        recon = decoder.forward(latent)
        if hyper.binarize_output:
            recon = (recon >= 0.5).astype(np.float64)
        return recon

    return phi


class SurrogateSliceRule(Rule):
    """Network rule reading a slice of the bottleneck roundtrip of a point.

    Used by the observation-space view of a decoder-map model: the rule's
    membership at an observation is evaluated at the encoder's surrogate
    latent, decoded back.
    """

    def __init__(self, encoder: Mlp, decoder: Mlp, network: Mlp, lo: int, hi: int,
                 binarize_latent: bool, binarize_output: bool):
        self.encoder = encoder
        self.decoder = decoder
        self.network = network
        self.lo = lo
        self.hi = hi
        self.binarize_latent = binarize_latent
        self.binarize_output = binarize_output

    def _roundtrip(self, xs: np.ndarray) -> np.ndarray:
        latent = self.encoder.forward(np.asarray(xs, dtype=np.float64))
        if self.binarize_latent:
            latent = (latent >= 0.5).astype(np.float64)
        recon = self.decoder.forward(latent)
        if self.binarize_output:
            recon = (recon >= 0.5).astype(np.float64)
        return recon

    def values(self, points):
        phi = self._roundtrip(points)
        return self.network.forward(phi[:, self.lo : self.hi])[:, 0]


class DecodedSliceRule(Rule):
    """Network rule reading a slice of the decoded observation of a latent."""

    def __init__(self, decoder: Mlp, network: Mlp, lo: int, hi: int, binarize_output: bool):
        self.decoder = decoder
        self.network = network
        self.lo = lo
        self.hi = hi
        self.binarize_output = binarize_output

    def values(self, points):
        x = self.decoder.forward(np.asarray(points, dtype=np.float64))
        if self.binarize_output:
            x = (x >= 0.5).astype(np.float64)
        return self.network.forward(x[:, self.lo : self.hi])[:, 0]


@dataclass
class AutoencoderNbr:
    """Trained rule networks over a frozen autoencoder bottleneck.

    Two query views exist.  The latent view enumerates the 2**latent_dim
    decoder inputs directly, but an 8-bit code space cannot reach most of
    the 2**11 observation patterns, so condition sets lose their witnesses
    and query answers collapse.  The surrogate view enumerates observations
    and evaluates memberships at the encoder's surrogate latents, which
    preserves the witness structure; it is the default for queries.
    """

    encoder: Mlp
    decoder: Mlp
    networks: list
    slices: list
    beliefs: tuple
    hyper: AutoencoderHyper
    observation_dim: int = 11

    def latent_model(self) -> NbrModel:
        fmap = DecoderMap(
            self.decoder,
            self.observation_dim,
            encoder=self.encoder,
            binarize_surrogate=self.hyper.binarize_latent,
        )
        rules = tuple(
            DecodedSliceRule(self.decoder, net, lo, hi, self.hyper.binarize_output)
            for net, (lo, hi) in zip(self.networks, self.slices)
        )
        return NbrModel(LatentSpace(self.hyper.latent_dim), fmap, rules, self.beliefs)

    def composed_model(self) -> NbrModel:
        rules = tuple(
            SurrogateSliceRule(
                self.encoder, self.decoder, net, lo, hi,
                self.hyper.binarize_latent, self.hyper.binarize_output,
            )
            for net, (lo, hi) in zip(self.networks, self.slices)
        )
        return NbrModel(
            LatentSpace(self.observation_dim),
            IdentityMap(self.observation_dim),
            rules,
            self.beliefs,
        )


def train_autoencoder_variant(
    config: SyntheticWorldConfig,
    hyper: TrainHyper,
    ae_hyper: Optional[AutoencoderHyper] = None,
) -> tuple:
    """Fit the bottleneck, freeze it, then train rules through the surrogate.

    Returns the artifact and a report; the report carries the autoencoder's
    reconstruction accuracy and the data-side training summary.
    """
    ae_hyper = ae_hyper or AutoencoderHyper(seed=hyper.seed)
    data = generate_world(config)
    completions = np.concatenate(
        [PartialObservation.from_array(row).completions() for row in data.data]
    ).astype(np.float64)
    encoder, decoder, accuracy = train_autoencoder(completions, ae_hyper)
    if accuracy < ae_hyper.required_bit_accuracy:
        raise DivergenceError(
            f"autoencoder reconstruction accuracy {accuracy:.4f} below "
            f"{ae_hyper.required_bit_accuracy}"
        )
    state = initial_state(hyper)
    state.input_transform = surrogate_transform(encoder, decoder, ae_hyper)
    state, report = train_rules(data, hyper, state=state)
    artifact = AutoencoderNbr(
        encoder=encoder,
        decoder=decoder,
        networks=state.networks,
        slices=state.slices,
        beliefs=tuple(state.beliefs),
        hyper=ae_hyper,
        observation_dim=data.dim,
    )
    report.extras["variant"] = "autoencoder"
    report.extras["reconstruction_accuracy"] = accuracy
    return artifact, report
