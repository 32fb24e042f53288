"""Ready-made models: conjugate Gaussian toy, polynomial regression, pump
failures, and the additive factorial HMM, each bundled with its inverse
factorization, network specs, and default training settings."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .graph import DistributionSpec, GraphModel, Node, Plate, VariableId, ancestral_sample, const, var
from .inverse import InverseModel, invert
from .training import FactorSpec, TrainConfig, make_specs


@dataclass
class ModelBundle:
    name: str
    model: GraphModel
    inverse: InverseModel
    specs: dict[str, FactorSpec]
    train_config: TrainConfig
    model_config: dict
    data: dict | None = None  # default observed values for inference

    def observed_values(self, data: dict | None = None) -> dict:
        data = self.data if data is None else data
        if data is None:
            raise ValueError(f"model {self.name!r} has no default data; supply observations")
        missing = [str(y) for y in self.model.observed if y not in data]
        if missing:
            raise ValueError(f"observations missing for {missing[:5]}")
        return {y: float(data[y]) for y in self.model.observed}


# -- conjugate Gaussian toy ----------------------------------------------------

@dataclass(frozen=True)
class ToyConfig:
    prior_var: float = 1.0
    noise_var: float = 1.0
    hidden: tuple[int, ...] = (32, 32)
    components: int = 2


def build_conjugate_toy(config: ToyConfig = ToyConfig(), train: TrainConfig | None = None) -> ModelBundle:
    x, y = var("x"), var("y")
    model = GraphModel((
        Node(x, "latent", (), const("gaussian", 0.0, config.prior_var)),
        Node(y, "observed", (x,), DistributionSpec("gaussian", lambda m: (m, config.noise_var))),
    ), name="conjugate-toy")
    inv = invert(model)
    specs = make_specs(model, inv, config.hidden, config.components)
    train = train or TrainConfig(n_train=2000, n_validate=500, minibatch=100,
                                 max_steps_per_epoch=500, n_epochs=40)
    return ModelBundle("conjugate-toy", model, inv, specs, train, _cfg(config), {y: 1.0})


def toy_posterior(y: float, config: ToyConfig = ToyConfig()) -> tuple[float, float]:
    """Exact posterior mean and stdev of x given y."""
    prec = 1.0 / config.prior_var + 1.0 / config.noise_var
    return (y / config.noise_var) / prec, np.sqrt(1.0 / prec)


def toy_log_evidence(y: float, config: ToyConfig = ToyConfig()) -> float:
    v = config.prior_var + config.noise_var
    return float(-0.5 * (np.log(2 * np.pi * v) + y * y / v))


# -- polynomial regression -----------------------------------------------------

@dataclass(frozen=True)
class RegressionConfig:
    N: int = 50
    dof: float = 4.0
    scale: float = 1.0
    z_low: float = -10.0
    z_high: float = 10.0
    hidden: tuple[int, ...] = (200, 200)
    components: int = 3
    data_seed: int = 0  # synthetic dataset used when no observations are supplied


def build_regression(config: RegressionConfig = RegressionConfig(), train: TrainConfig | None = None,
                     data: tuple[np.ndarray, np.ndarray] | None = None) -> ModelBundle:
    if config.N < 0:
        raise ValueError("N must be nonnegative")
    w = [var(f"w{d}") for d in range(3)]
    nodes = [Node(w[d], "latent", (), const("laplace", 0.0, 10.0 ** (1 - d))) for d in range(3)]
    nu, eps = config.dof, config.scale
    for n in range(1, config.N + 1):
        z, t = var("z", n), var("t", n)
        nodes.append(Node(z, "observed", (), const("uniform", config.z_low, config.z_high)))
        nodes.append(Node(t, "observed", (w[0], w[1], w[2], z), DistributionSpec(
            "student_t", lambda a, b, c, zz: (nu, a + b * zz + c * zz * zz, eps))))
    plates = (Plate("data", ("z", "t"), config.N),) if config.N else ()
    model = GraphModel(tuple(nodes), plates, name="regression")
    inv = invert(model)
    specs = make_specs(model, inv, config.hidden, config.components)
    train = train or TrainConfig(n_train=10000, n_validate=1000, minibatch=100,
                                 max_steps_per_epoch=500, n_epochs=50)
    if data is None:
        vals = ancestral_sample(model, np.random.default_rng(config.data_seed))
        obs = {y: float(vals[y]) for y in model.observed}
    else:
        z, t = (np.asarray(a, dtype=float) for a in data)
        if len(z) != config.N or len(t) != config.N:
            raise ValueError(f"regression data has {len(z)} rows but the model was built for N={config.N}")
        obs = {}
        for n in range(config.N):
            obs[var("z", n + 1)] = float(z[n])
            obs[var("t", n + 1)] = float(t[n])
    return ModelBundle("regression", model, inv, specs, train, _cfg(config), obs)


def load_table(path, columns: int = 2) -> tuple[np.ndarray, ...]:
    """Whitespace-separated numeric columns; ``#`` starts a comment."""
    rows = np.loadtxt(path, comments="#", ndmin=2)
    if rows.shape[1] != columns:
        raise ValueError(f"{path}: expected {columns} columns, found {rows.shape[1]}")
    return tuple(rows[:, j] for j in range(columns))


# -- pump failures ---------------------------------------------------------------

def load_pump_fixture(path=None) -> tuple[np.ndarray, np.ndarray]:
    """Read the two-column ``(t_n, y_n)`` pump file (the bundled fixture by default)."""
    if path is None:
        text = resources.files("amortsmc.data").joinpath("pumps.txt").read_text()
    else:
        text = Path(path).read_text()
    rows = np.loadtxt(text.splitlines(), ndmin=2)
    if rows.shape[1] != 2:
        raise ValueError("pump data needs two columns: t y")
    return rows[:, 0], rows[:, 1]


@dataclass(frozen=True)
class PumpConfig:
    N: int = 10
    alpha_rate: float = 1.0
    beta_shape: float = 0.1
    beta_rate: float = 1.0
    t_mean: float = 50.0
    hidden: tuple[int, ...] = (500, 500)
    components: int = 10


def build_pump(config: PumpConfig = PumpConfig(), train: TrainConfig | None = None,
               data: tuple[np.ndarray, np.ndarray] | None = None) -> ModelBundle:
    alpha, beta = var("alpha"), var("beta")
    nodes = [
        Node(alpha, "latent", (), const("exponential", config.alpha_rate)),
        Node(beta, "latent", (), const("gamma", config.beta_shape, config.beta_rate)),
    ]
    thetas = []
    for n in range(1, config.N + 1):
        th, t, y = var("theta", n), var("t", n), var("y", n)
        thetas.append(th)
        nodes += [
            Node(th, "latent", (alpha, beta), DistributionSpec("gamma", lambda a, b: (a, b))),
            Node(t, "observed", (), const("exponential", 1.0 / config.t_mean)),
            Node(y, "observed", (th, t), DistributionSpec("poisson", lambda r, tt: (r * tt,))),
        ]
    model = GraphModel(tuple(nodes), (Plate("pump", ("theta", "t", "y"), config.N),), name="pump")
    # beta before alpha reproduces the inverse with alpha <- theta, beta <- (theta, alpha)
    inv = invert(model, latent_order=[beta, alpha] + thetas)
    keys = _keys(inv)
    top = next(k for k in keys if k != "pump")
    specs = make_specs(model, inv, config.hidden, config.components, {top: "plate_summary"})
    train = train or TrainConfig(n_train=2000, n_validate=200, minibatch=100,
                                 max_steps_per_epoch=500, n_epochs=300)
    if data is None and config.N == 10:
        data = load_pump_fixture()
    obs = None
    if data is not None:
        t_obs, y_obs = data
        if len(t_obs) != config.N:
            raise ValueError(f"pump data has {len(t_obs)} rows but the model was built for N={config.N}")
        obs = {}
        for n in range(config.N):
            obs[var("t", n + 1)] = float(t_obs[n])
            obs[var("y", n + 1)] = float(y_obs[n])
    return ModelBundle("pump", model, inv, specs, train, _cfg(config), obs)


# -- factorial HMM -------------------------------------------------------------

@dataclass(frozen=True)
class FhmmConfig:
    D: int = 20
    T: int = 30
    mu_low: float = 30.0
    mu_high: float = 500.0
    mus: tuple[float, ...] | None = None
    sigma: float = 10.0
    p_init: float = 0.1
    p_switch: float = 0.05
    transition_hidden: tuple[int, ...] = (300, 300, 300, 300)
    initial_hidden: tuple[int, ...] = (300, 300, 300, 300)
    episode_seed: int = 0  # synthetic episode used when no observations are supplied

    @property
    def mu(self) -> np.ndarray:
        if self.mus is not None:
            return np.asarray(self.mus, dtype=float)
        if self.D == 1:
            return np.array([self.mu_low])
        return np.linspace(self.mu_low, self.mu_high, self.D)


def fhmm_x(i: int, t: int) -> VariableId:
    return var(f"x{i}", t)


def build_fhmm(config: FhmmConfig = FhmmConfig(), train: TrainConfig | None = None,
               ys: np.ndarray | None = None) -> ModelBundle:
    D, T = config.D, config.T
    mu, var_y = config.mu, config.sigma ** 2
    p_on, p_sw = config.p_init, config.p_switch
    nodes = []
    stages = []
    for t in range(1, T + 1):
        xs = [fhmm_x(i, t) for i in range(1, D + 1)]
        stages.append(xs)
        for i, x in enumerate(xs, start=1):
            if t == 1:
                nodes.append(Node(x, "latent", (), const("bernoulli", p_on)))
            else:
                nodes.append(Node(x, "latent", (fhmm_x(i, t - 1),), DistributionSpec(
                    "bernoulli", lambda prev: (p_sw + (1.0 - 2.0 * p_sw) * prev,))))
        nodes.append(Node(var("y", t), "observed", tuple(xs), DistributionSpec(
            "gaussian", lambda *s: (sum(m * v for m, v in zip(mu, s)), var_y))))
    members = tuple(f"x{i}" for i in range(1, D + 1)) + ("y",)
    model = GraphModel(tuple(nodes), (Plate("time", members, T),), name="fhmm")
    inv = invert(model, stages=stages)
    hidden = {k: (config.transition_hidden if k == "time" else config.initial_hidden) for k in _keys(inv)}
    specs = make_specs(model, inv, hidden)
    # small fresh sets and full-batch steps: validation stops most epochs early,
    # so progress is bounded by the epoch count rather than the set size
    train = train or TrainConfig(n_train=200, n_validate=20, minibatch=200,
                                 max_steps_per_epoch=500, n_epochs=2000)
    if ys is None:
        ys = fhmm_episode(config, np.random.default_rng(config.episode_seed))[1]
    elif len(ys) != T:
        raise ValueError(f"episode has {len(ys)} observations but the model was built for T={T}")
    data = fhmm_observations(ys)
    return ModelBundle("fhmm", model, inv, specs, train, _cfg(config), data)


def fhmm_observations(ys) -> dict:
    return {var("y", t): float(v) for t, v in enumerate(np.asarray(ys, dtype=float), start=1)}


def fhmm_episode(config: FhmmConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``(states (T, D), observations (T,))`` from the FHMM prior."""
    bundle = build_fhmm(replace(config, transition_hidden=(1,), initial_hidden=(1,)), ys=np.zeros(config.T))
    vals = ancestral_sample(bundle.model, rng)
    states = np.array([[vals[fhmm_x(i, t)] for i in range(1, config.D + 1)]
                       for t in range(1, config.T + 1)], dtype=float)
    ys = np.array([vals[var("y", t)] for t in range(1, config.T + 1)], dtype=float)
    return states, ys


def write_episode(path, config: FhmmConfig, ys) -> None:
    header = [config.D, config.sigma, config.p_init, config.p_switch, *config.mu]
    rows = [" ".join(repr(float(h)) for h in header)] + [repr(float(v)) for v in ys]
    Path(path).write_text("\n".join(rows) + "\n")


def read_episode(path) -> tuple[FhmmConfig, np.ndarray]:
    """Parse an episode file: a parameter row ``D sigma p_init p_switch mu_1..mu_D`` then ``y_1..y_T``."""
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    head = [float(v) for v in lines[0]]
    D = int(head[0])
    if len(head) != 4 + D:
        raise ValueError("episode header must hold D, sigma, p_init, p_switch and D means")
    ys = np.array([float(r[0]) for r in lines[1:]])
    cfg = FhmmConfig(D=D, T=len(ys), sigma=head[1], p_init=head[2], p_switch=head[3], mus=tuple(head[4:]))
    return cfg, ys


# -- exact enumeration oracle --------------------------------------------------

@dataclass
class FhmmExact:
    log_evidence: float
    filtering: np.ndarray  # (T, D) P(x_t^i = 1 | y_1..t)
    smoothing: np.ndarray  # (T, D) P(x_t^i = 1 | y_1..T)


def _joint_states(D: int) -> np.ndarray:
    return np.array(list(itertools.product([0.0, 1.0], repeat=D)))


def _fhmm_tables(config: FhmmConfig, ys):
    S = _joint_states(config.D)
    p_on, p_sw = config.p_init, config.p_switch
    log_init = (S * np.log(p_on) + (1 - S) * np.log1p(-p_on)).sum(1)
    same = (S[:, None, :] == S[None, :, :])
    log_trans = np.where(same, np.log1p(-p_sw), np.log(p_sw)).sum(-1)
    means = S @ config.mu
    ys = np.asarray(ys, dtype=float)
    v = config.sigma ** 2
    log_lik = -0.5 * (np.log(2 * np.pi * v) + (ys[:, None] - means[None, :]) ** 2 / v)
    return S, log_init, log_trans, log_lik


def small_oracle_fhmm(config: FhmmConfig, ys) -> FhmmExact:
    """Forward-backward over the ``2^D`` joint states."""
    S, log_init, log_trans, log_lik = _fhmm_tables(config, ys)
    T = len(ys)
    alpha = np.empty((T, len(S)))
    alpha[0] = log_init + log_lik[0]
    for t in range(1, T):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + log_trans, axis=0) + log_lik[t]
    beta = np.zeros((T, len(S)))
    for t in range(T - 2, -1, -1):
        beta[t] = logsumexp(log_trans + (log_lik[t + 1] + beta[t + 1])[None, :], axis=1)
    log_z = float(logsumexp(alpha[-1]))
    filt = np.exp(alpha - logsumexp(alpha, axis=1, keepdims=True)) @ S
    post = alpha + beta
    smooth = np.exp(post - logsumexp(post, axis=1, keepdims=True)) @ S
    return FhmmExact(log_z, filt, smooth)


def brute_force_fhmm(config: FhmmConfig, ys) -> FhmmExact:
    """Sum over all ``2^(D*T)`` trajectories; an independent check of the forward pass."""
    S, log_init, log_trans, log_lik = _fhmm_tables(config, ys)
    T, K = len(ys), len(S)
    paths = np.array(list(itertools.product(range(K), repeat=T)))
    lw = log_init[paths[:, 0]] + log_lik[0, paths[:, 0]]
    for t in range(1, T):
        lw = lw + log_trans[paths[:, t - 1], paths[:, t]] + log_lik[t, paths[:, t]]
    log_z = float(logsumexp(lw))
    w = np.exp(lw - log_z)
    smooth = np.stack([w @ S[paths[:, t]] for t in range(T)])
    filt = []
    for t in range(T):
        # filtering at t only needs the prefix weights
        lw_t = log_init[paths[:, 0]] + log_lik[0, paths[:, 0]]
        for s in range(1, t + 1):
            lw_t = lw_t + log_trans[paths[:, s - 1], paths[:, s]] + log_lik[s, paths[:, s]]
        wt = np.exp(lw_t - logsumexp(lw_t))
        filt.append(wt @ S[paths[:, t]])
    return FhmmExact(log_z, np.stack(filt), smooth)


def fhmm_lookahead(config: FhmmConfig, ys):
    """Target ``p(x_1..n, y_1..T)`` with its exact incremental conditional as proposal.

    Proposing each slice from ``p(x_t | x_t-1, y_t..T)`` makes every
    incremental weight equal, so the evidence estimate is exact.
    """
    from .smc import FunctionProposal, TargetSequence

    S, log_init, log_trans, log_lik = _fhmm_tables(config, ys)
    T, D = len(ys), config.D
    beta = np.zeros((T, len(S)))
    for t in range(T - 2, -1, -1):
        beta[t] = logsumexp(log_trans + (log_lik[t + 1] + beta[t + 1])[None, :], axis=1)
    place = 2 ** np.arange(D - 1, -1, -1)
    blocks = tuple(tuple(fhmm_x(i, t) for i in range(1, D + 1)) for t in range(1, T + 1))

    def index(values, t):
        return np.column_stack([np.asarray(values[x]) for x in blocks[t - 1]]).astype(int) @ place

    def joint(values, t):
        # log f(x_t | x_t-1) + log g(y_t | x_t) + log beta_t(x_t) - log beta_t-1(x_t-1)
        cur = index(values, t)
        if t == 1:
            return log_init[cur] + log_lik[0, cur] + beta[0, cur]
        prev = index(values, t - 1)
        return log_trans[prev, cur] + log_lik[t - 1, cur] + beta[t - 1, cur] - beta[t - 2, prev]

    def propose(block, values, rng, K):
        t = blocks.index(tuple(block)) + 1
        if t == 1:
            logits = np.broadcast_to(log_init + log_lik[0] + beta[0], (K, len(S)))
        else:
            prev = index(values, t - 1)
            logits = log_trans[prev] + log_lik[t - 1] + beta[t - 1] - beta[t - 2, prev][:, None]
        logp = logits - logsumexp(logits, axis=1, keepdims=True)
        u = rng.random((K, 1))
        pick = np.minimum((np.cumsum(np.exp(logp), axis=1) < u).sum(1), len(S) - 1)
        out = {x: S[pick, i] for i, x in enumerate(blocks[t - 1])}
        return out, logp[np.arange(K), pick]

    target = TargetSequence(blocks, lambda n, values: joint(values, n), fhmm_observations(ys))
    return target, FunctionProposal(propose)


# -- registry ------------------------------------------------------------------

def _keys(inv: InverseModel) -> list[str]:
    from .training import network_key
    keys = []
    for i, f in enumerate(inv.factors):
        k = network_key(f, i)
        if k not in keys:
            keys.append(k)
    return keys


def _cfg(config) -> dict:
    d = asdict(config)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


CONFIGS = {
    "conjugate-toy": ToyConfig,
    "regression": RegressionConfig,
    "pump": PumpConfig,
    "fhmm": FhmmConfig,
}

BUILDERS = {
    "conjugate-toy": build_conjugate_toy,
    "regression": build_regression,
    "pump": build_pump,
    "fhmm": build_fhmm,
}


def build(name: str, config=None, train: TrainConfig | None = None, **kwargs) -> ModelBundle:
    if name not in BUILDERS:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(BUILDERS)}")
    config = config if config is not None else CONFIGS[name]()
    return BUILDERS[name](config, train, **kwargs)
