"""
Navigation Handler
PPO policy training and success-rate evaluation (train-policy, eval-nav)
"""

import argparse
import logging
import os
from typing import Optional

from checkpoint import load_detector, load_policy, save_checkpoint
from config import Config
from navsim import DetectorObserver, NavConfig, NavEnv, Observer, write_trace
from ppo import PpoConfig, eval_success_rate, train_policy
from utils.helpers import create_progress_bar, require_file

logger = logging.getLogger(__name__)


def _observer(detector_path: Optional[str]) -> Optional[Observer]:
    if not detector_path:
        return None
    model = load_detector(require_file(detector_path, "detector checkpoint"))
    logger.info(f"observations from detector {detector_path}")
    return DetectorObserver(model)


class NavigationHandler:
    """Policy-side commands"""

    def register(self, subparsers, common: argparse.ArgumentParser) -> None:
        train = subparsers.add_parser("train-policy", parents=[common], help="train the navigation policy with PPO")
        train.add_argument("--out", default="runs", help="output directory for policy checkpoint and metrics")
        train.add_argument("--total-steps", dest="TOTAL_STEPS", type=int)
        train.add_argument("--horizon", dest="HORIZON", type=int)
        train.add_argument("--num-objects", dest="NUM_OBJECTS", type=int, help="boxes in the room (1-3)")
        train.add_argument("--lr", dest="PPO_LR", type=float)
        train.add_argument("--detector", help="detector checkpoint; ground-truth boxes when omitted")
        train.set_defaults(handler=self.train_policy)

        evaluate = subparsers.add_parser("eval-nav", parents=[common], help="greedy success rate of a policy")
        evaluate.add_argument("--policy", required=True, help="policy checkpoint")
        evaluate.add_argument("--detector", help="detector checkpoint; ground-truth boxes when omitted")
        evaluate.add_argument("--episodes", type=int, default=100)
        evaluate.add_argument("--num-objects", dest="NUM_OBJECTS", type=int)
        evaluate.add_argument("--trace", help="write a JSON-lines episode trace here")
        evaluate.set_defaults(handler=self.eval_nav)

    def train_policy(self, cfg: Config, args: argparse.Namespace) -> int:
        observer = _observer(args.detector)
        nav = NavConfig.from_config(cfg)

        def env_factory(seed: int) -> NavEnv:
            return NavEnv(nav, observer, seed=seed)

        result = train_policy(env_factory, PpoConfig.from_config(cfg), cfg.SEED, args.out, cfg.PROGRESS)
        path = os.path.join(args.out, "policy.ckpt")
        extra = {"success_rate_100": result.success_rate, "num_objects": nav.num_objects}
        save_checkpoint(result.policy, path, extra=extra)
        print(f"rolling success over last 100 episodes: {result.success_rate:.3f} -> {path}")
        return 0

    def eval_nav(self, cfg: Config, args: argparse.Namespace) -> int:
        policy = load_policy(require_file(args.policy, "policy checkpoint"))
        env = NavEnv(NavConfig.from_config(cfg), _observer(args.detector), seed=cfg.SEED, record=bool(args.trace))
        rate = eval_success_rate(env, policy, args.episodes, seed=cfg.SEED)
        if args.trace:
            write_trace(args.trace, env.trace)
        successes = int(round(rate * args.episodes))
        print(f"success {create_progress_bar(successes, args.episodes, width=20)} ({successes}/{args.episodes})")
        print(f"success_rate: {rate:.6f}")
        return 0


# Global instance
navigation_handler = NavigationHandler()
