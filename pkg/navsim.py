"""
Single-room goal navigation environment

The agent turns left/right by a fixed angle or moves forward by a fixed stride
inside a square room with up to three colored boxes. One present box is the goal.
Observations are the per-class image boxes (from the ground-truth projection
oracle or a detector run on the rendered view), the one-hot goal and the one-hot
last action.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from autodiff import Tensor, no_grad
from dataset import normalize
from distill import decode
from errors import ContractError
from scenegen import NUM_CLASSES, BoxPlacement, SceneSpec, render_scene
from utils.geometry import Camera, project_cuboid, wrap_angle

logger = logging.getLogger(__name__)

LEFT, RIGHT, FORWARD = 0, 1, 2
ACTION_NAMES = ("left", "right", "forward")
NUM_ACTIONS = len(ACTION_NAMES)
OBS_DIM = 5 * NUM_CLASSES + NUM_ACTIONS

AGENT_RADIUS = 0.2
MIN_BOX_SEPARATION = 1.5
SPAWN_CLEARANCE = 1.2
WALL_MARGIN = 0.6
ORACLE_IMAGE_SIZE = 224
DETECTOR_CONF_THRESHOLD = 0.25

# reward table
REWARD_CORRECT_GOAL = 10.0
REWARD_WRONG_GOAL_OR_COLLISION = -2.0
REWARD_STEP = -0.01
REWARD_OPPOSITE_TURN = -0.05
DISTANCE_SCALE = 0.5
REWARD_GOAL_FIRST_SEEN = 0.1
EXPLORE_FORWARD = 0.01
EXPLORE_TURN = 0.005

REWARD_COMPONENTS = (
    "correct_goal",
    "wrong_goal_or_collision",
    "step",
    "opposite_turn",
    "distance",
    "goal_first_seen",
    "exploration",
)

Seed = Union[int, Sequence[int]]


@dataclass
class NavConfig:
    room_size: float = 10.0
    turn_degrees: float = 15.0
    stride: float = 0.25
    proximity: float = 0.6
    box_size: float = 0.8
    max_steps: int = 1024
    num_objects: int = 3
    terminate_on_collision: bool = True

    def __post_init__(self):
        if self.num_objects not in range(1, NUM_CLASSES + 1):
            raise ContractError(f"num_objects must be in 1..{NUM_CLASSES}, got {self.num_objects}")
        if self.room_size <= 2 * (WALL_MARGIN + self.box_size):
            raise ContractError(f"room of {self.room_size} m cannot hold {self.box_size} m boxes")

    @classmethod
    def from_config(cls, cfg) -> "NavConfig":
        return cls(
            room_size=cfg.ROOM_SIZE,
            turn_degrees=cfg.TURN_DEGREES,
            stride=cfg.STRIDE,
            proximity=cfg.PROXIMITY,
            box_size=cfg.BOX_SIZE,
            max_steps=cfg.MAX_EPISODE_STEPS,
            num_objects=cfg.NUM_OBJECTS,
            terminate_on_collision=cfg.TERMINATE_ON_COLLISION,
        )


@dataclass
class EnvState:
    room_size: float
    agent_x: float
    agent_y: float
    heading: float
    boxes: List[BoxPlacement]
    goal_class: int
    step_count: int = 0
    last_action: Optional[int] = None
    prev_goal_distance: float = 0.0
    goal_seen_before: bool = False
    done: bool = False

    @property
    def goal_box(self) -> BoxPlacement:
        for box in self.boxes:
            if box.class_id == self.goal_class:
                return box
        raise ContractError(f"goal class {self.goal_class} has no box in the room")

    def distance_to(self, box: BoxPlacement) -> float:
        return math.hypot(self.agent_x - box.x, self.agent_y - box.y)

    @property
    def goal_distance(self) -> float:
        return self.distance_to(self.goal_box)

    def camera(self, image_size: int = ORACLE_IMAGE_SIZE) -> Camera:
        return Camera(self.agent_x, self.agent_y, self.heading, image_size)


@dataclass
class Observation:
    state_vector: np.ndarray  # [5n + a]
    image: Optional[np.ndarray] = None  # rendered view, detector mode only


@dataclass(frozen=True)
class StepEvents:
    reached_goal: bool = False
    reached_wrong_goal: bool = False
    collision: bool = False
    goal_visible: bool = False


@dataclass
class StepResult:
    state: EnvState
    reward: float
    done: bool
    observation: Observation
    components: Dict[str, float] = field(default_factory=dict)
    events: StepEvents = field(default_factory=StepEvents)
    truncated: bool = False


# ======================================================================
# Observation
# ======================================================================


def goal_in_view(state: EnvState, image_size: int = ORACLE_IMAGE_SIZE) -> bool:
    """True when the goal box projects to a non-empty box inside the camera frustum"""
    goal = state.goal_box
    return project_cuboid(state.camera(image_size), goal.x, goal.y, goal.size) is not None


def success(state: EnvState, proximity: float) -> bool:
    return state.goal_distance < proximity


class OracleObserver:
    """Ground-truth projection of every box; no occlusion"""

    image_size = ORACLE_IMAGE_SIZE

    def __call__(self, state: EnvState) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        corners = np.zeros((NUM_CLASSES, 4))
        camera = state.camera(self.image_size)
        for box in state.boxes:
            projected = project_cuboid(camera, box.x, box.y, box.size)
            if projected is not None:
                corners[box.class_id] = projected
        return corners, None


class DetectorObserver:
    """Render the first-person view and keep one detection per class above the threshold"""

    def __init__(self, model, conf_threshold: float = DETECTOR_CONF_THRESHOLD):
        self.model = model
        self.conf_threshold = conf_threshold
        self.image_size = model.cfg.input_size

    def __call__(self, state: EnvState) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        spec = SceneSpec(
            image_size=self.image_size,
            camera_x=state.agent_x,
            camera_y=state.agent_y,
            camera_yaw=state.heading,
            boxes=[BoxPlacement(b.class_id, b.x, b.y, b.size) for b in state.boxes],
            room_size=state.room_size,
            seed=state.step_count,
        )
        pixels = render_scene(spec).pixels
        images = normalize(pixels[None], self.model.norm_mean, self.model.norm_std)
        dtype = self.model.parameters()[0].dtype
        with no_grad():
            raw = self.model(Tensor(images.astype(dtype))).raw
        corners = np.zeros((NUM_CLASSES, 4))
        for det in decode(raw, self.conf_threshold)[0]:
            if det.class_id < NUM_CLASSES:
                corners[det.class_id] = det.bbox
        return corners, pixels


Observer = Union[OracleObserver, DetectorObserver]


def observe(state: EnvState, observer: Optional[Observer] = None) -> Observation:
    """[4n box corners | n one-hot goal | a one-hot last action]"""
    corners, image = (observer or OracleObserver())(state)
    goal = np.zeros(NUM_CLASSES)
    goal[state.goal_class] = 1.0
    last = np.zeros(NUM_ACTIONS)
    if state.last_action is not None:
        last[state.last_action] = 1.0
    return Observation(np.concatenate([corners.reshape(-1), goal, last]), image)


# ======================================================================
# Dynamics and reward
# ======================================================================


def _rng(seed: Seed) -> np.random.Generator:
    return np.random.default_rng(seed if isinstance(seed, int) else list(seed))


def sample_layout(cfg: NavConfig, rng: np.random.Generator, max_tries: int = 1000) -> EnvState:
    """Boxes at non-overlapping random positions, goal uniform among them, agent spawned clear of every box"""
    separation = max(MIN_BOX_SEPARATION, cfg.box_size)
    low, high = WALL_MARGIN + cfg.box_size / 2.0, cfg.room_size - WALL_MARGIN - cfg.box_size / 2.0
    classes = sorted(int(c) for c in rng.choice(NUM_CLASSES, size=cfg.num_objects, replace=False))
    goal_class = int(rng.choice(classes))

    boxes: List[BoxPlacement] = []
    for class_id in classes:
        for _ in range(max_tries):
            x, y = (float(v) for v in rng.uniform(low, high, size=2))
            if all(math.hypot(x - b.x, y - b.y) >= separation for b in boxes):
                boxes.append(BoxPlacement(class_id, x, y, cfg.box_size))
                break
        else:
            raise ContractError(f"could not place {cfg.num_objects} boxes in a {cfg.room_size} m room")

    for _ in range(max_tries):
        ax, ay = (float(v) for v in rng.uniform(WALL_MARGIN, cfg.room_size - WALL_MARGIN, size=2))
        if all(math.hypot(ax - b.x, ay - b.y) >= SPAWN_CLEARANCE for b in boxes):
            break
    else:
        raise ContractError("could not find a free spawn position")
    heading = wrap_angle(float(rng.uniform(-math.pi, math.pi)))

    state = EnvState(cfg.room_size, ax, ay, heading, boxes, goal_class)
    state.prev_goal_distance = state.goal_distance
    state.goal_seen_before = goal_in_view(state)
    return state


def reset(seed: Seed, cfg: Optional[NavConfig] = None, observer: Optional[Observer] = None) -> Tuple[EnvState, Observation]:
    state = sample_layout(cfg or NavConfig(), _rng(seed))
    return state, observe(state, observer)


def is_opposite_turn(last_action: Optional[int], action: int) -> bool:
    return {last_action, action} == {LEFT, RIGHT}


def reward_fn(prev: EnvState, new: EnvState, action: int, events: StepEvents) -> Tuple[float, Dict[str, float]]:
    """Sum of the reward table rows that apply; returns (total, per-row values)"""
    components = dict.fromkeys(REWARD_COMPONENTS, 0.0)
    if events.reached_goal:
        components["correct_goal"] = REWARD_CORRECT_GOAL
    if events.reached_wrong_goal or events.collision:
        components["wrong_goal_or_collision"] = REWARD_WRONG_GOAL_OR_COLLISION
    components["step"] = REWARD_STEP
    if is_opposite_turn(prev.last_action, action):
        components["opposite_turn"] = REWARD_OPPOSITE_TURN
    components["distance"] = DISTANCE_SCALE * (prev.prev_goal_distance - new.goal_distance)
    if events.goal_visible and not prev.goal_seen_before:
        components["goal_first_seen"] = REWARD_GOAL_FIRST_SEEN
    if not events.goal_visible:
        components["exploration"] = EXPLORE_FORWARD if action == FORWARD else EXPLORE_TURN

    total = 0.0
    for name in REWARD_COMPONENTS:
        total += components[name]
    return total, components


def _move(state: EnvState, action: int, cfg: NavConfig) -> Tuple[float, float, float, bool]:
    heading, x, y = state.heading, state.agent_x, state.agent_y
    if action == LEFT:
        return x, y, wrap_angle(heading + math.radians(cfg.turn_degrees)), False
    if action == RIGHT:
        return x, y, wrap_angle(heading - math.radians(cfg.turn_degrees)), False
    tx = x + cfg.stride * math.cos(heading)
    ty = y + cfg.stride * math.sin(heading)
    lo, hi = AGENT_RADIUS, cfg.room_size - AGENT_RADIUS
    cx, cy = min(max(tx, lo), hi), min(max(ty, lo), hi)
    return cx, cy, heading, (cx, cy) != (tx, ty)


def step(
    state: EnvState, action: int, cfg: Optional[NavConfig] = None, observer: Optional[Observer] = None
) -> StepResult:
    """Apply one action; the input state is left untouched"""
    cfg = cfg or NavConfig()
    if state.done:
        raise ContractError("step() called on a finished episode; call reset() first")
    if action not in (LEFT, RIGHT, FORWARD):
        raise ContractError(f"action must be one of {list(range(NUM_ACTIONS))}, got {action}")

    x, y, heading, collision = _move(state, action, cfg)
    moved = replace(state, agent_x=x, agent_y=y, heading=heading, step_count=state.step_count + 1)

    contact = [b for b in moved.boxes if moved.distance_to(b) < cfg.proximity]
    contact.sort(key=moved.distance_to)
    reached_goal = bool(contact) and contact[0].class_id == state.goal_class
    events = StepEvents(
        reached_goal=reached_goal,
        reached_wrong_goal=bool(contact) and not reached_goal,
        collision=collision,
        goal_visible=goal_in_view(moved),
    )
    reward, components = reward_fn(state, moved, action, events)

    terminal = events.reached_goal or events.reached_wrong_goal or (collision and cfg.terminate_on_collision)
    truncated = not terminal and moved.step_count >= cfg.max_steps
    new_state = replace(
        moved,
        last_action=action,
        prev_goal_distance=moved.goal_distance,
        goal_seen_before=state.goal_seen_before or events.goal_visible,
        done=terminal or truncated,
    )
    return StepResult(new_state, reward, new_state.done, observe(new_state, observer), components, events, truncated)


# ======================================================================
# Stateful wrapper and traces
# ======================================================================


class NavEnv:
    """Holds the current episode; episode k of an env seeded with s uses layout seed (s, k)"""

    def __init__(
        self,
        cfg: Optional[NavConfig] = None,
        observer: Optional[Observer] = None,
        seed: int = 0,
        record: bool = False,
    ):
        self.cfg = cfg or NavConfig()
        self.observer = observer
        self.seed = seed
        self.record = record
        self.episode = 0
        self.state: Optional[EnvState] = None
        self.observation: Optional[Observation] = None
        self.episode_return = 0.0
        self.trace: List[Dict[str, Any]] = []

    def reset(self, seed: Optional[Seed] = None) -> Observation:
        layout_seed = seed if seed is not None else (self.seed, self.episode)
        self.episode += 1
        self.state, obs = reset(layout_seed, self.cfg, self.observer)
        self.observation = obs
        self.episode_return = 0.0
        if self.record:
            self.trace.append(
                {
                    "episode": self.episode,
                    "step": 0,
                    "goal_class": self.state.goal_class,
                    "state_vector": obs.state_vector.tolist(),
                }
            )
        return obs

    def step(self, action: int) -> StepResult:
        if self.state is None:
            raise ContractError("step() called before reset()")
        result = step(self.state, action, self.cfg, self.observer)
        self.state = result.state
        self.observation = result.observation
        self.episode_return += result.reward
        if self.record:
            self.trace.append(
                {
                    "episode": self.episode,
                    "step": result.state.step_count,
                    "action": ACTION_NAMES[action],
                    "reward": result.reward,
                    "components": result.components,
                    "done": result.done,
                    "success": result.events.reached_goal,
                    "state_vector": result.observation.state_vector.tolist(),
                }
            )
        return result


def write_trace(path: str, records: Sequence[Dict[str, Any]]) -> None:
    """JSON lines, one record per step"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    logger.info(f"wrote {len(records)} trace records to {path}")


def read_trace(path: str) -> List[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
