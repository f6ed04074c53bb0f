"""Off-policy goal-conditioned learners: SAC and its quantile variant.

Both agents share a squashed-Gaussian actor with auto-tuned entropy
temperature.  The classic variant regresses twin scalar critics to a
clipped double-Q target; the quantile variant keeps an ensemble of
distributional critics, pools their target atoms, drops the largest few
to curb overestimation, and fits the rest with a quantile Huber loss.

Everything is float64 numpy with explicit gradients (see nn.py), which
keeps the per-update math auditable by finite differences.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .env import GoalObservation
from .nn import MLP, Adam, polyak_update

__all__ = [
    "AgentConfig",
    "SquashedGaussianActor",
    "Learner",
    "sac_target",
    "tqc_target_atoms",
    "quantile_midpoints",
    "quantile_huber_loss",
    "temperature_gradient",
]

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_TANH_EPS = 1e-6


@dataclass(frozen=True)
class AgentConfig:
    """Hyperparameters shared by both learner variants."""

    algo: str = "sac"
    obs_dim: int = 6
    goal_dim: int = 3
    act_dim: int = 3
    hidden: Tuple[int, ...] = (512, 512, 512)
    lr: float = 1e-3
    gamma: float = 0.95
    rho: float = 0.005
    target_entropy: float = -3.0
    init_log_alpha: float = 0.0
    n_critics: int = 2
    n_quantiles: int = 25
    drop_per_net: int = 2

    def __post_init__(self) -> None:
        if self.algo not in ("sac", "tqc"):
            raise ValueError(f"algo must be 'sac' or 'tqc', got {self.algo!r}")
        for name in ("obs_dim", "goal_dim", "act_dim", "n_critics", "n_quantiles"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden sizes must be positive, got {self.hidden}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must be in (0, 1], got {self.rho}")
        if self.lr <= 0.0:
            raise ValueError("lr must be > 0")
        if self.drop_per_net < 0:
            raise ValueError("drop_per_net must be >= 0")
        if self.algo == "sac" and self.n_critics != 2:
            raise ValueError("the scalar-critic variant uses exactly 2 critics")
        if self.algo == "tqc":
            kept = self.n_critics * self.n_quantiles - self.drop_per_net * self.n_critics
            if kept < 1:
                raise ValueError(
                    "drop_per_net removes every pooled atom; reduce it or add quantiles"
                )

    @property
    def input_dim(self) -> int:
        return self.obs_dim + self.goal_dim


# --------------------------------------------------------------------- actor


class SquashedGaussianActor:
    """tanh-squashed diagonal Gaussian policy with reparameterized samples.

    The network emits [mu, log_std]; log_std is clamped to
    [LOG_STD_MIN, LOG_STD_MAX] and the clamp zeroes its gradient outside
    the range.  Log-densities include the tanh change-of-variables term
    with a 1e-6 floor inside the log.
    """

    def __init__(self, input_dim: int, act_dim: int, hidden, rng: np.random.Generator):
        self.act_dim = act_dim
        self.mlp = MLP([input_dim, *hidden, 2 * act_dim], rng)

    def heads(self, x: np.ndarray):
        out, cache = self.mlp.forward_cache(x)
        single = out.ndim == 1
        o = out[None, :] if single else out
        mu = o[:, : self.act_dim]
        raw = o[:, self.act_dim :]
        log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        return mu, raw, log_std, cache, single

    def act(
        self,
        x: np.ndarray,
        rng: Optional[np.random.Generator] = None,
        deterministic: bool = False,
    ) -> np.ndarray:
        """Action for rollout; deterministic mode consumes no randomness."""
        mu, _, log_std, _, single = self.heads(x)
        if deterministic:
            a = np.tanh(mu)
        else:
            if rng is None:
                raise ValueError("stochastic action needs an rng")
            eps = rng.standard_normal(mu.shape)
            a = np.tanh(mu + np.exp(log_std) * eps)
        return a[0] if single else a

    def sample(self, x: np.ndarray, eps: np.ndarray):
        """Reparameterized batch sample.

        Returns (actions, log-probs, cache) where cache feeds
        :meth:`backward`.  ``eps`` must be standard-normal noise of shape
        (batch, act_dim), drawn by the caller so the rng stream stays in
        one place.
        """
        mu, raw, log_std, mlp_cache, single = self.heads(x)
        if single:
            raise ValueError("sample() expects a batch input")
        sigma = np.exp(log_std)
        u = mu + sigma * eps
        t = np.tanh(u)
        denom = 1.0 - t * t + _TANH_EPS
        logp = np.sum(
            -0.5 * eps * eps - log_std - _LOG_SQRT_2PI - np.log(denom), axis=1
        )
        cache = {
            "mlp": mlp_cache,
            "t": t,
            "sigma": sigma,
            "eps": eps,
            "denom": denom,
            "std_mask": (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX),
        }
        return t, logp, cache

    def backward(
        self, cache: dict, grad_action: np.ndarray, grad_logp: np.ndarray
    ) -> List[np.ndarray]:
        """Parameter gradients of a scalar loss given dL/da and dL/dlogp.

        Derivation with fixed noise eps, u = mu + sigma*eps, a = tanh(u):
        da/du = 1 - a^2, and the log-density differentiates to
        dlogp/du = 2a(1-a^2)/(1-a^2+1e-6) (only the tanh term depends on
        u once eps is frozen), plus a direct -1 per dimension from the
        -log_std term.  du/dmu = 1 and du/dlog_std = sigma*eps.
        """
        t = cache["t"]
        one_minus_t2 = 1.0 - t * t
        g_tanh = 2.0 * t * one_minus_t2 / cache["denom"]
        d_u = grad_action * one_minus_t2 + grad_logp[:, None] * g_tanh
        d_mu = d_u
        d_log_std = d_u * (cache["sigma"] * cache["eps"]) - grad_logp[:, None]
        d_log_std = d_log_std * cache["std_mask"]
        grad_out = np.concatenate([d_mu, d_log_std], axis=1)
        grads, _ = self.mlp.backward(cache["mlp"], grad_out)
        return grads


# ------------------------------------------------------------ target helpers


def sac_target(
    reward: np.ndarray,
    done: np.ndarray,
    gamma: float,
    q1_next: np.ndarray,
    q2_next: np.ndarray,
    logp_next: np.ndarray,
    alpha: float,
) -> np.ndarray:
    """Clipped double-Q soft backup: r + gamma(1-done)(min(q1,q2) - alpha*logp)."""
    soft = np.minimum(q1_next, q2_next) - alpha * logp_next
    return reward + gamma * (1.0 - done) * soft


def tqc_target_atoms(
    reward: np.ndarray,
    done: np.ndarray,
    gamma: float,
    atoms_next: np.ndarray,
    logp_next: np.ndarray,
    alpha: float,
    drop_per_net: int,
    n_nets: int,
) -> np.ndarray:
    """Pooled, truncated distributional backup.

    ``atoms_next`` has shape (batch, n_nets * m).  All atoms are pooled,
    sorted ascending, and the drop_per_net * n_nets largest are removed
    before the soft backup is applied atom-wise.
    """
    atoms = np.asarray(atoms_next, dtype=np.float64)
    if atoms.ndim == 3:
        atoms = atoms.reshape(atoms.shape[0], -1)
    total = atoms.shape[1]
    keep = total - drop_per_net * n_nets
    if keep < 1:
        raise ValueError("truncation drops all pooled atoms")
    kept = np.sort(atoms, axis=1)[:, :keep]
    soft = kept - alpha * logp_next[:, None]
    return reward[:, None] + gamma * (1.0 - done)[:, None] * soft


def quantile_midpoints(m: int) -> np.ndarray:
    """Quantile fractions tau_i = (2i - 1) / (2m), i = 1..m."""
    i = np.arange(1, m + 1, dtype=np.float64)
    return (2.0 * i - 1.0) / (2.0 * m)


def temperature_gradient(logp: np.ndarray, target_entropy: float) -> float:
    """d/d(log_alpha) of the loss -log_alpha * mean(logp + target_entropy).

    log-probs enter as constants; descending this gradient raises alpha
    whenever the policy's average log-prob exceeds -target_entropy (i.e.
    entropy is below target) and lowers it otherwise.
    """
    return -float(np.mean(logp + target_entropy))


def quantile_huber_loss(
    theta: np.ndarray,
    targets: np.ndarray,
    taus: np.ndarray,
    kappa: float = 1.0,
) -> Tuple[float, np.ndarray]:
    """Quantile Huber loss of predicted atoms against fixed target atoms.

    Per pair (target j, atom i): |tau_i - 1{u<0}| * huber_kappa(u) / kappa
    with u = target_j - theta_i, averaged over batch, predicted atoms,
    and target atoms.  Returns (loss, dloss/dtheta) with theta of shape
    (batch, m) and targets (batch, k).
    """
    theta = np.asarray(theta, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    b, m = theta.shape
    k = targets.shape[1]
    u = targets[:, :, None] - theta[:, None, :]  # (b, k, m)
    abs_u = np.abs(u)
    quad = abs_u <= kappa
    huber = np.where(quad, 0.5 * u * u, kappa * (abs_u - 0.5 * kappa))
    weight = np.abs(taus[None, None, :] - (u < 0.0))
    loss = float(np.mean(weight * huber / kappa))
    dhuber = np.where(quad, u, kappa * np.sign(u))
    dtheta = -(weight * dhuber / kappa).sum(axis=1) / (b * k * m)
    return loss, dtheta


# -------------------------------------------------------------------- learner


class Learner:
    """Actor-critic learner; ``algo`` selects scalar or quantile critics.

    Update order within one gradient step: critics first, then the actor
    against the freshly updated online critics, then the entropy
    temperature, then Polyak on the critic targets.
    """

    def __init__(self, config: AgentConfig, init_rng: np.random.Generator):
        self.config = config
        cfg = config
        critic_out = 1 if cfg.algo == "sac" else cfg.n_quantiles
        critic_in = cfg.input_dim + cfg.act_dim
        self.actor = SquashedGaussianActor(cfg.input_dim, cfg.act_dim, cfg.hidden, init_rng)
        self.critics = [
            MLP([critic_in, *cfg.hidden, critic_out], init_rng)
            for _ in range(cfg.n_critics)
        ]
        self.targets = [net.clone() for net in self.critics]
        self.opt_actor = Adam(self.actor.mlp.params, lr=cfg.lr)
        self.opt_critics = [Adam(net.params, lr=cfg.lr) for net in self.critics]
        self.log_alpha = np.array([cfg.init_log_alpha], dtype=np.float64)
        self.opt_alpha = Adam([self.log_alpha], lr=cfg.lr)
        self.taus = quantile_midpoints(cfg.n_quantiles)
        self.update_count = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    # ------------------------------------------------------------- acting
    def act(
        self,
        obs: GoalObservation,
        rng: Optional[np.random.Generator] = None,
        deterministic: bool = False,
    ) -> np.ndarray:
        x = np.concatenate([obs.observation, obs.desired_goal])
        return self.actor.act(x, rng, deterministic)

    # ------------------------------------------------------------- update
    def update(self, batch: Dict[str, np.ndarray], rng: np.random.Generator) -> Dict[str, float]:
        """One gradient step on a replay batch; returns diagnostics."""
        cfg = self.config
        obs = np.asarray(batch["observation"], dtype=np.float64)
        next_obs = np.asarray(batch["next_observation"], dtype=np.float64)
        goal = np.asarray(batch["desired_goal"], dtype=np.float64)
        action = np.asarray(batch["action"], dtype=np.float64)
        reward = np.asarray(batch["reward"], dtype=np.float64)
        done = np.asarray(batch["done"], dtype=np.float64)
        b = obs.shape[0]

        xg = np.concatenate([obs, goal], axis=1)
        xg_next = np.concatenate([next_obs, goal], axis=1)
        alpha = self.alpha

        # Critic step: targets built from target nets and a fresh next action.
        eps_next = rng.standard_normal((b, cfg.act_dim))
        a_next, logp_next, _ = self.actor.sample(xg_next, eps_next)
        xa_next = np.concatenate([xg_next, a_next], axis=1)
        xa = np.concatenate([xg, action], axis=1)

        if cfg.algo == "sac":
            q1_next = self.targets[0].forward(xa_next)[:, 0]
            q2_next = self.targets[1].forward(xa_next)[:, 0]
            y = sac_target(reward, done, cfg.gamma, q1_next, q2_next, logp_next, alpha)
            critic_loss = 0.0
            for net, opt in zip(self.critics, self.opt_critics):
                q, cache = net.forward_cache(xa)
                err = q[:, 0] - y
                critic_loss += float(np.mean(err * err))
                grads, _ = net.backward(cache, (2.0 * err / b)[:, None])
                opt.step(net.params, grads)
        else:
            atoms_next = np.concatenate(
                [tnet.forward(xa_next) for tnet in self.targets], axis=1
            )
            y = tqc_target_atoms(
                reward,
                done,
                cfg.gamma,
                atoms_next,
                logp_next,
                alpha,
                cfg.drop_per_net,
                cfg.n_critics,
            )
            critic_loss = 0.0
            for net, opt in zip(self.critics, self.opt_critics):
                theta, cache = net.forward_cache(xa)
                loss_n, dtheta = quantile_huber_loss(theta, y, self.taus)
                critic_loss += loss_n
                grads, _ = net.backward(cache, dtheta)
                opt.step(net.params, grads)

        # Actor step against the updated online critics.
        eps = rng.standard_normal((b, cfg.act_dim))
        a_pi, logp_pi, actor_cache = self.actor.sample(xg, eps)
        xa_pi = np.concatenate([xg, a_pi], axis=1)
        act_slice = slice(cfg.input_dim, cfg.input_dim + cfg.act_dim)

        if cfg.algo == "sac":
            q1, c1 = self.critics[0].forward_cache(xa_pi)
            q2, c2 = self.critics[1].forward_cache(xa_pi)
            q1 = q1[:, 0]
            q2 = q2[:, 0]
            q_pi = np.minimum(q1, q2)
            pick1 = (q1 <= q2).astype(np.float64)
            _, dx1 = self.critics[0].backward(c1, (-pick1 / b)[:, None])
            _, dx2 = self.critics[1].backward(c2, (-(1.0 - pick1) / b)[:, None])
            grad_a = dx1[:, act_slice] + dx2[:, act_slice]
        else:
            q_sum = np.zeros(b)
            dxs = []
            scale = -1.0 / (b * cfg.n_critics * cfg.n_quantiles)
            for net in self.critics:
                theta, cache = net.forward_cache(xa_pi)
                q_sum += theta.mean(axis=1)
                _, dx = net.backward(cache, np.full_like(theta, scale))
                dxs.append(dx[:, act_slice])
            q_pi = q_sum / cfg.n_critics
            grad_a = sum(dxs)

        grad_logp = np.full(b, alpha / b)
        actor_grads = self.actor.backward(actor_cache, grad_a, grad_logp)
        self.opt_actor.step(self.actor.mlp.params, actor_grads)
        actor_loss = float(np.mean(alpha * logp_pi - q_pi))

        # Temperature step in log space, then target tracking.
        grad_log_alpha = temperature_gradient(logp_pi, cfg.target_entropy)
        self.opt_alpha.step([self.log_alpha], [np.array([grad_log_alpha])])
        for tnet, net in zip(self.targets, self.critics):
            polyak_update(tnet, net, cfg.rho)

        self.update_count += 1
        return {
            "critic_loss": critic_loss,
            "actor_loss": actor_loss,
            "alpha": alpha,
            "entropy": float(-np.mean(logp_pi)),
            "mean_q": float(np.mean(q_pi)),
        }

    # --------------------------------------------------------- checkpoint
    def state_dict(self) -> Dict:
        meta = {"agent": dict(asdict(self.config)), "update_count": self.update_count}
        meta["agent"]["hidden"] = list(self.config.hidden)
        arrays: Dict[str, np.ndarray] = {"log_alpha": self.log_alpha.copy()}
        _merge(arrays, "actor", self.actor.mlp.state_dict())
        _merge(arrays, "opt_actor", self.opt_actor.state_dict())
        _merge(arrays, "opt_alpha", self.opt_alpha.state_dict())
        for i, net in enumerate(self.critics):
            _merge(arrays, f"critic{i}", net.state_dict())
            _merge(arrays, f"opt_critic{i}", self.opt_critics[i].state_dict())
        for i, net in enumerate(self.targets):
            _merge(arrays, f"target{i}", net.state_dict())
        return {"meta": meta, "arrays": arrays}

    def load_state_dict(self, state: Dict) -> None:
        meta = state["meta"]
        arrays = state["arrays"]
        restored = AgentConfig(
            **{**meta["agent"], "hidden": tuple(meta["agent"]["hidden"])}
        )
        if restored != self.config:
            raise ValueError("checkpoint agent config does not match this learner")
        self.update_count = int(meta["update_count"])
        self.log_alpha[:] = np.asarray(arrays["log_alpha"], dtype=np.float64)
        self.actor.mlp.load_state_dict(_split(arrays, "actor"))
        self.opt_actor.load_state_dict(_split(arrays, "opt_actor"))
        self.opt_alpha.load_state_dict(_split(arrays, "opt_alpha"))
        for i, net in enumerate(self.critics):
            net.load_state_dict(_split(arrays, f"critic{i}"))
            self.opt_critics[i].load_state_dict(_split(arrays, f"opt_critic{i}"))
        for i, net in enumerate(self.targets):
            net.load_state_dict(_split(arrays, f"target{i}"))

    @classmethod
    def from_state(cls, state: Dict, init_rng: Optional[np.random.Generator] = None) -> "Learner":
        meta = state["meta"]
        config = AgentConfig(
            **{**meta["agent"], "hidden": tuple(meta["agent"]["hidden"])}
        )
        learner = cls(config, init_rng or np.random.default_rng(0))
        learner.load_state_dict(state)
        return learner


def _merge(arrays: Dict[str, np.ndarray], prefix: str, state: Dict[str, np.ndarray]) -> None:
    for key, value in state.items():
        arrays[f"{prefix}.{key}"] = value


def _split(arrays: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    head = prefix + "."
    return {k[len(head):]: v for k, v in arrays.items() if k.startswith(head)}
