"""Short pendulum training run through the library API.

A few thousand steps is enough to watch returns improve; the full 100k-step
run in the acceptance suite reaches roughly -120 to -200 on deterministic
evaluations.
"""

from dagsac.agent import Agent, config_for_env, train
from dagsac.envs import make_env
from dagsac.graph import resolve_topology

cfg = config_for_env("pendulum", seed=0, total_steps=8_000, start_steps=1_000,
                     eval_interval=2_000, eval_episodes=5)
env = make_env(cfg.env)
graph = resolve_topology("single", env.spec.action_dim)
agent = Agent(env.spec, graph, cfg)

log = train(agent, env, cfg,
            on_eval=lambda ev: print(
                f"eval @ {ev.env_step:5d}: mean {ev.mean_return:8.1f} "
                f"(std {ev.std_return:.1f})"))

last = log.episodes[-1]
print(f"\n{last.episode} episodes, rolling avg return {last.avg_return_100:.1f}")
print("losses at the end:", f"J_V={log.losses[-1].j_v:.2f}",
      f"J_Q1={log.losses[-1].j_q1:.2f}", f"J_pi={log.losses[-1].j_pi:.2f}")
