"""Objectives and the alternating DL / RL update schedule."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .agent import Agent, deterministic_latent, sample_latent
from .config import RunConfig
from .env import EnvState, InpaintingEnv, center_mask, compose_state
from .metrics import psnr, ssim
from .nn import Optimizer, ParamSet, ema_update
from .replay import Batch, ReplayBuffer, Transition
from .tensor import Tensor


class NumericalError(RuntimeError):
    """A loss or parameter became NaN/Inf."""


class Temperature:
    """alpha = exp(log_alpha), tuned toward ``target_entropy``."""

    def __init__(self, z_dim: int, init_log_alpha: float = 0.0):
        self.log_alpha = Tensor(np.array(init_log_alpha), requires_grad=True)
        self.target_entropy = -float(z_dim)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data))


@dataclass
class LossReport:
    l_rec: float
    l_adv: float
    l_dl: float
    j_q1: float
    j_q2: float
    j_pi: float
    j_alpha: float
    alpha_value: float
    mean_q: float
    mean_logprob: float

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in asdict(self).values())


@dataclass
class IterationResult:
    iteration: int
    reward_mean: float
    psnr: float
    ssim: float
    losses: LossReport | None


# -- objectives ------------------------------------------------------------------------


def dl_loss(batch: Batch, agent: Agent, mask: np.ndarray, rng: np.random.Generator,
            lambda_rec: float, lambda_adv: float) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Returns (l_dl, l_rec, l_adv, composed prediction)."""
    x = Tensor(batch.x_t)
    out = agent.actor_out(x)
    z = sample_latent(out, rng).z
    y_tilde = agent.execute(x, z, out.skips)
    composed = compose_state(x, y_tilde, mask)
    l_rec = T.mean(T.absolute(composed - Tensor(batch.y)))
    # non-saturating generator form: -log D(T(x))
    l_adv = T.mean(T.softplus(-agent.discriminate(composed)))
    return lambda_rec * l_rec + lambda_adv * l_adv, l_rec, l_adv, composed


def discriminator_loss(agent: Agent, real: np.ndarray, fake: np.ndarray) -> Tensor:
    """-(log D(y) + log(1 - D(fake))) averaged over the batch; ``fake`` is a constant."""
    real_logit = agent.discriminate(Tensor(real))
    fake_logit = agent.discriminate(Tensor(fake))
    return T.mean(T.softplus(-real_logit)) + T.mean(T.softplus(fake_logit))


def soft_target(batch: Batch, agent: Agent, alpha: float, gamma: float, rng: np.random.Generator) -> np.ndarray:
    """r + gamma (1 - done) [min target Q(x', z') - alpha log pi(z'|x')], z' fresh from the policy."""
    with T.no_grad():
        x_next = Tensor(batch.x_next)
        lat = sample_latent(agent.actor_out(x_next), rng)
        q1 = agent.q(agent.critic1_target, x_next, lat.z).data
        q2 = agent.q(agent.critic2_target, x_next, lat.z).data
        value = np.minimum(q1, q2) - alpha * lat.log_prob.data
    return batch.r_t + gamma * (1.0 - batch.done) * value


def critic_loss(batch: Batch, agent: Agent, temperature: Temperature, gamma: float,
                rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    target = Tensor(soft_target(batch, agent, temperature.alpha, gamma, rng))
    x, z = Tensor(batch.x_t), Tensor(batch.z_t)
    j1 = 0.5 * T.mean(T.square(agent.q(agent.critic1, x, z) - target))
    j2 = 0.5 * T.mean(T.square(agent.q(agent.critic2, x, z) - target))
    return j1, j2


def actor_loss(batch: Batch, agent: Agent, temperature: Temperature,
               rng: np.random.Generator) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (j_pi, log_prob, min Q). Critic weights enter as constants."""
    x = Tensor(batch.x_t)
    lat = sample_latent(agent.actor_out(x), rng)
    q = T.minimum(agent.q(agent.critic1.detached(), x, lat.z), agent.q(agent.critic2.detached(), x, lat.z))
    j_pi = T.mean(temperature.alpha * lat.log_prob - q)
    return j_pi, lat.log_prob, q


def alpha_loss(log_probs, temperature: Temperature) -> Tensor:
    lp = Tensor(getattr(log_probs, "data", log_probs))
    return T.mean(-T.exp(temperature.log_alpha) * (lp + temperature.target_entropy))


# -- training loop -------------------------------------------------------------------


class Trainer:
    """Owns every mutable training component for one run."""

    def __init__(self, cfg: RunConfig, env: InpaintingEnv):
        cfg.validate()
        self.cfg = cfg
        self.env = env
        self.agent = Agent(cfg.architecture(), cfg.seed)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, cfg.image_shape, cfg.z_dim)
        self.temperature = Temperature(cfg.z_dim, cfg.init_log_alpha)
        self.iteration = 0
        a = self.agent
        opt = dict(kind=cfg.optimizer, clip=cfg.grad_clip)
        self.optimizers = {
            "dl": Optimizer([("actor/", a.actor), ("executor/", a.executor)], cfg.lr_dl, **opt),
            "disc": Optimizer([("discriminator/", a.discriminator)], cfg.lr_dl, **opt),
            "q": Optimizer([("critic1/", a.critic1), ("critic2/", a.critic2)], cfg.lr_q, **opt),
            "pi": Optimizer([("actor/", a.actor)], cfg.lr_pi, **opt),
            "alpha": Optimizer([("", _single("log_alpha", self.temperature.log_alpha))], cfg.lr_alpha, **opt),
        }
        self.mask = center_mask(cfg.image_channels, cfg.image_size)

    def iteration_rng(self, iteration: int) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, 0, iteration])

    def rollout(self, state: EnvState, rng: np.random.Generator | None, push: bool = True):
        """Run the episode to its horizon; returns (final state, rewards, per-step states)."""
        rewards, states = [], [state.current]
        while state.t < state.horizon:
            z, y_tilde = self.agent.act(state.current[None], rng)
            res = self.env.step(state, y_tilde[0])
            if push:
                self.buffer.push(Transition(state.target, state.current, z[0], res.reward, res.state.current, res.done))
            rewards.append(res.reward)
            state = res.state
            states.append(state.current)
        return state, rewards, states

    def gradient_step(self, rng: np.random.Generator) -> LossReport:
        cfg, a, opts = self.cfg, self.agent, self.optimizers

        # (1) actor + executor on the reconstruction/adversarial objective, then D
        batch = self.buffer.sample(cfg.batch_size, rng)
        for ps in (a.actor, a.executor, a.discriminator):
            ps.zero_grad()
        l_dl, l_rec, l_adv, composed = dl_loss(batch, a, self.mask, rng, cfg.lambda_rec, cfg.lambda_adv)
        _check_finite("l_dl", l_dl)
        l_dl.backward()
        opts["dl"].step()
        if cfg.lambda_adv > 0:
            a.discriminator.zero_grad()
            d_loss = discriminator_loss(a, batch.y, composed.data)
            _check_finite("discriminator loss", d_loss)
            d_loss.backward()
            opts["disc"].step()

        # (2) twin critics
        for ps in (a.actor, a.critic1, a.critic2):
            ps.zero_grad()
        j_q1, j_q2 = critic_loss(batch, a, self.temperature, cfg.gamma, rng)
        _check_finite("j_q1", j_q1)
        _check_finite("j_q2", j_q2)
        (j_q1 + j_q2).backward()
        opts["q"].step()

        # (3) actor on the soft policy objective
        a.actor.zero_grad()
        j_pi, log_prob, q = actor_loss(batch, a, self.temperature, rng)
        _check_finite("j_pi", j_pi)
        j_pi.backward()
        opts["pi"].step()

        # (4) temperature
        self.temperature.log_alpha.grad = None
        j_alpha = alpha_loss(log_prob.data, self.temperature)
        _check_finite("j_alpha", j_alpha)
        j_alpha.backward()
        opts["alpha"].step()

        # (5) target critics
        ema_update(a.critic1_target, a.critic1, cfg.tau)
        ema_update(a.critic2_target, a.critic2, cfg.tau)

        return LossReport(
            l_rec=l_rec.item(), l_adv=l_adv.item(), l_dl=l_dl.item(), j_q1=j_q1.item(), j_q2=j_q2.item(),
            j_pi=j_pi.item(), j_alpha=j_alpha.item(), alpha_value=self.temperature.alpha,
            mean_q=float(q.data.mean()), mean_logprob=float(log_prob.data.mean()),
        )

    def train_iteration(self) -> IterationResult:
        rng = self.iteration_rng(self.iteration)
        state, _ = self.env.reset(rng)
        final, rewards, _ = self.rollout(state, rng)
        reports = []
        if len(self.buffer) >= max(self.cfg.min_buffer, 1):
            for _ in range(self.cfg.grad_steps):
                reports.append(self.gradient_step(rng))
        losses = None
        if reports:
            losses = LossReport(**{k: float(np.mean([getattr(r, k) for r in reports])) for k in asdict(reports[0])})
            if not losses.is_finite():
                raise NumericalError(f"non-finite loss at iteration {self.iteration}: {losses}")
        result = IterationResult(self.iteration, float(np.mean(rewards)), psnr(final.current, final.target),
                                 ssim(final.current, final.target), losses)
        self.iteration += 1
        return result

    def evaluate(self, samples) -> list[dict]:
        """Deterministic-policy rollouts (z = tanh(mean)) on fixed samples."""
        rows = []
        for i, sample in enumerate(samples):
            state = self.env.start(sample)
            final, rewards, states = self.rollout(state, None, push=False)
            rows.append({
                "index": i,
                "psnr": psnr(final.current, final.target),
                "ssim": ssim(final.current, final.target),
                "reward_mean": float(np.mean(rewards)),
                "states": states,
                "target": final.target,
            })
        return rows

    # -- checkpoint plumbing ------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {
            "meta/iteration": np.array([float(self.iteration)]),
            "temperature/log_alpha": self.temperature.log_alpha.data.reshape(1),
        }
        for net, ps in self.agent.param_sets().items():
            for name, t in ps.items():
                out[f"{net}/{name}"] = t.data
        for key, opt in self.optimizers.items():
            for name, arr in opt.state_arrays().items():
                out[f"opt/{key}/{name}"] = arr
        for name, arr in self.buffer.state_arrays().items():
            out[f"replay/{name}"] = arr
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        def group(prefix: str) -> dict[str, np.ndarray]:
            return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

        for net, ps in self.agent.param_sets().items():
            sub = group(f"{net}/")
            missing = set(ps) - set(sub)
            if missing:
                raise ValueError(f"checkpoint lacks parameters for {net}: {sorted(missing)[:3]}")
            ps.load_arrays(sub)
        for key, opt in self.optimizers.items():
            opt.load_state_arrays(group(f"opt/{key}/"))
        self.buffer.load_state_arrays(group("replay/"))
        self.temperature.log_alpha.data = np.array(arrays["temperature/log_alpha"].reshape(()), dtype=np.float64)
        self.iteration = int(arrays["meta/iteration"][0])


def _single(name: str, t: Tensor) -> ParamSet:
    return ParamSet({name: t})


def _check_finite(name: str, t: Tensor) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NumericalError(f"{name} is not finite")
