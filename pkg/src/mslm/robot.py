"""Navigation API object the plan-program interpreter drives.

Wraps the feature grid, obstacle map, and the per-modality databases behind
the primitive surface (move_to, get_map, get_major_map, ...).  Movement is
simulated kinematically through the discretized action stream, so the trace
reflects what an ideal agent executing the emitted actions would do.
"""

from __future__ import annotations

import numpy as np

from .audio import PoseFeatureDB, audio_query_heatmap, normalized_scores
from .featmap import FeatureGrid
from .heatmap import Heatmap, ScoredPoses, argmax_position, object_heatmap, \
    scored_heatmap
from .plan import (ActionSpec, AgentState, AVLMAPS_PROFILE, PrimitiveResolver,
                   path_cost, path_to_actions, plan_path)
from .query import LabelSet, ObstacleGrid, segment_grid

# decay rates per cell: primary query vs auxiliary constraint
EPS_MAJOR = 0.1
EPS_AUX = 0.01


class NavRobot:
    def __init__(self, grid: FeatureGrid, vocabulary, provider,
                 obstacles: ObstacleGrid, state: AgentState,
                 action_spec: ActionSpec = AVLMAPS_PROFILE,
                 audio_db: PoseFeatureDB = None, sound_classes=(),
                 visual_db: PoseFeatureDB = None,
                 eps_major: float = EPS_MAJOR, eps_aux: float = EPS_AUX,
                 image_loader=None):
        self.grid = grid
        self.spec = grid.spec
        self.provider = provider
        self.vocabulary = list(vocabulary)
        self.obstacles = obstacles
        self.state = state
        self.action_spec = action_spec
        self.audio_db = audio_db
        self.sound_classes = list(sound_classes)
        self.visual_db = visual_db
        self.eps_major = eps_major
        self.eps_aux = eps_aux
        self.image_loader = image_loader or (lambda p: np.load(p))
        self.trace = []
        self.actions = []
        self._segmentation = None
        self._resolver = PrimitiveResolver(self._locate, self.spec.scale)

    # -- landmark indexing -------------------------------------------------

    def _segment(self):
        if self._segmentation is None:
            labels = LabelSet(self.vocabulary,
                              self.provider.embed_text(self.vocabulary))
            self._segmentation = segment_grid(self.grid, labels)
        return self._segmentation

    def _locate(self, name: str):
        if name not in self.vocabulary:
            return None
        seg = self._segment()
        mask = seg.top_down_mask([self.vocabulary.index(name)])
        return mask if mask.any() else None

    def object_voxels(self, name: str):
        if name not in self.vocabulary:
            return None
        seg = self._segment()
        voxels = seg.mask(self.vocabulary.index(name))
        return voxels if voxels.shape[0] else None

    # -- movement ----------------------------------------------------------

    def _go(self, goal, kind: str, target_heading=None):
        record = {"type": kind, "goal": None if goal is None else
                  (float(goal[0]), float(goal[1])), "ok": False,
                  "path_m": 0.0, "reached": tuple(map(float, self.state.position))}
        if goal is None:
            self.trace.append(record)
            return None
        start = (int(round(self.state.position[0])),
                 int(round(self.state.position[1])))
        path = plan_path(self.obstacles, start,
                         (int(round(goal[0])), int(round(goal[1]))))
        if path is None:
            self.trace.append(record)
            return None
        acts = path_to_actions(path, self.state, self.action_spec,
                               self.spec.scale, target_heading=target_heading)
        self.actions.extend(acts)
        record["ok"] = True
        record["path_m"] = path_cost(path) * self.spec.scale
        record["reached"] = tuple(map(float, self.state.position))
        self.trace.append(record)
        return None

    def _turn_to(self, heading, kind: str):
        record = {"type": kind, "ok": heading is not None,
                  "heading": heading}
        if heading is not None:
            # reuse the action discretizer with a single-cell path
            cell = (int(round(self.state.position[0])),
                    int(round(self.state.position[1])))
            acts = path_to_actions([cell], self.state, self.action_spec,
                                   self.spec.scale, target_heading=heading)
            self.actions.extend(acts)
        self.trace.append(record)
        return None

    def record_failure(self, kind: str):
        self.trace.append({"type": kind, "goal": None, "ok": False,
                           "path_m": 0.0,
                           "reached": tuple(map(float, self.state.position))})

    def _resolved(self, name, *args):
        return self._resolver.resolve(name, args, self.state)

    # -- primitive API (names the plan-program grammar accepts) ------------

    def move_to(self, pos):
        pos = np.asarray(pos, dtype=np.float64).reshape(-1)
        return self._go((pos[0], pos[1]), "move_to")

    def move_to_object(self, name):
        r = self._resolved("move_to_object", name)
        return self._go(r.goal if r.found else None, "move_to_object")

    def move_to_left(self, name):
        r = self._resolved("move_to_left", name)
        return self._go(r.goal if r.found else None, "move_to_left")

    def move_to_right(self, name):
        r = self._resolved("move_to_right", name)
        return self._go(r.goal if r.found else None, "move_to_right")

    def move_in_between(self, a, b):
        r = self._resolved("move_in_between", a, b)
        return self._go(r.goal if r.found else None, "move_in_between")

    def move_north(self, name):
        r = self._resolved("move_north", name)
        return self._go(r.goal if r.found else None, "move_north")

    def move_south(self, name):
        r = self._resolved("move_south", name)
        return self._go(r.goal if r.found else None, "move_south")

    def move_east(self, name):
        r = self._resolved("move_east", name)
        return self._go(r.goal if r.found else None, "move_east")

    def move_west(self, name):
        r = self._resolved("move_west", name)
        return self._go(r.goal if r.found else None, "move_west")

    def move_forward(self, dist):
        r = self._resolved("move_forward", dist)
        return self._go(r.goal, "move_forward")

    def face(self, name):
        r = self._resolved("face", name)
        return self._turn_to(r.heading if r.found else None, "face")

    def turn(self, angle):
        r = self._resolved("turn", angle)
        return self._turn_to(r.heading, "turn")

    def turn_absolute(self, angle):
        r = self._resolved("turn_absolute", angle)
        return self._turn_to(r.heading, "turn_absolute")

    def with_pos_on_left(self, name):
        r = self._resolved("with_pos_on_left", name)
        return self._turn_to(r.heading if r.found else None, "with_pos_on_left")

    def with_pos_on_right(self, name):
        r = self._resolved("with_pos_on_right", name)
        return self._turn_to(r.heading if r.found else None, "with_pos_on_right")

    with_object_on_left = with_pos_on_left
    with_object_on_right = with_pos_on_right

    def get_pos(self, name):
        r = self._resolved("get_pos", name)
        if not r.found:
            return None
        return np.array([r.goal[0], r.goal[1]], dtype=np.float64)

    # -- multimodal API ----------------------------------------------------

    def _heatmap(self, eps, img=None, obj=None, sound=None):
        given = [v is not None for v in (img, obj, sound)]
        if sum(given) != 1:
            raise ValueError("exactly one of img/obj/sound must be given")
        if obj is not None:
            voxels = self.object_voxels(obj)
            if voxels is None:
                return None
            return object_heatmap(voxels.astype(np.float64), eps, self.spec)
        if sound is not None:
            if self.audio_db is None or len(self.audio_db) == 0:
                return None
            return audio_query_heatmap(self.audio_db, sound, self.provider,
                                       eps, self.spec)
        if self.visual_db is None or len(self.visual_db) == 0:
            return None
        q = self.provider.embed_global(img)
        scores = normalized_scores(self.visual_db, q)
        positions = np.stack([p for p, _e in self.visual_db.entries])
        return scored_heatmap(ScoredPoses(positions, scores), eps, self.spec)

    def get_major_map(self, img=None, obj=None, sound=None):
        return self._heatmap(self.eps_major, img=img, obj=obj, sound=sound)

    def get_map(self, img=None, obj=None, sound=None):
        return self._heatmap(self.eps_aux, img=img, obj=obj, sound=sound)

    def get_max_pos_3d(self, heatmap: Heatmap):
        out = argmax_position(heatmap)
        if out is None:
            return None
        idx, _score = out
        return np.array(idx, dtype=np.float64)

    get_max_pose_3d = get_max_pos_3d

    def load_image(self, path):
        return self.image_loader(path)
