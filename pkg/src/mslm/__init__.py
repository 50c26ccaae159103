"""Multimodal spatial language maps: build queryable 3D embedding maps from
posed RGB-D streams and audio, and drive navigation from natural language."""

from .errors import (DimensionMismatchError, InvalidDepthError, MapFormatError,
                     MslmError, ProgramParseError, ProviderError,
                     UnsupportedInstructionError)
from .geometry import (GridSpec, Intrinsics, Pose, back_project,
                       back_project_many, project_to_grid, to_world,
                       voxel_index, voxel_indices)
from .featmap import FeatureGrid, FuseStats, PosedFrame, fuse_frame, \
    fuse_points, merge
from .featmap import load as load_map, save as save_map
from .query import (LabelSet, ObstacleGrid, SegmentationGrid,
                    embodiment_obstacle_map, obstacle_mask, segment_grid,
                    write_pgm)
from .heatmap import (Heatmap, ScoredPoses, argmax_position, eps_per_cell,
                      fuse, object_heatmap, point_heatmap, scored_heatmap,
                      top_view)
from .audio import (AudioSegment, AudioTrack, OdometryTimeline, PoseFeatureDB,
                    audio_query_heatmap, build_audio_db, noise_gate, read_wav,
                    split_on_silence, write_wav)
from .visloc import (ReferenceFrame, localize_image, match_local, pnp_ransac,
                     retrieve_reference)
from .plan import (ActionSpec, AgentState, AVLMAPS_PROFILE, COARSE_PROFILE,
                   VLMAPS_PROFILE, path_cost, path_to_actions, plan_path)
from .instruct import (PlanProgram, execute_program, format_program,
                       generate_plan, load_context_prompt, parse_program,
                       rule_based_codegen)
from .providers import (FileProvider, MockProvider, RemoteProvider,
                        label_vector, make_provider, tone_frequency)
from .robot import NavRobot
from .simharness import (Dataset, EpisodeResult, SyntheticScene,
                         coverage_trajectory, eval_recall, eval_sr_spl,
                         generate_scene, in_a_row_sr, read_dataset,
                         synth_stream, write_dataset)

__version__ = "0.1.0"
