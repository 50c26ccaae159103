import numpy as np
import pytest

from mslm.errors import ProgramParseError, UnsupportedInstructionError
from mslm.heatmap import Heatmap
from mslm.geometry import GridSpec
from mslm.instruct import (NO_TARGET, PlanProgram, execute_program,
                           format_program, generate_plan, load_context_prompt,
                           parse_program, rule_based_codegen)
from mslm.providers import MockProvider

SPEC = GridSpec(8, 8, 4, 0.1)


class FakeRobot:
    """Records every primitive call; maps are real heatmaps over a tiny grid."""

    def __init__(self):
        self.calls = []
        self.trace = []
        self.known = {"chair", "table", "sofa", "counter", "laptop", "chairs",
                      "television", "west door", "east door"}

    def _log(self, name, *args, **kwargs):
        self.calls.append((name, args, kwargs))
        self.trace.append({"type": name, "ok": True})

    def __getattr__(self, name):
        def method(*args, **kwargs):
            self._log(name, *args, **kwargs)
            return None
        return method

    def record_failure(self, kind):
        self.trace.append({"type": kind, "ok": False})

    def get_pos(self, name):
        self._log("get_pos", name)
        if name not in self.known:
            return None
        return np.array([float(len(name)), 2.0])

    def get_map(self, img=None, obj=None, sound=None):
        self._log("get_map", img=img, obj=obj, sound=sound)
        vals = np.zeros(SPEC.shape)
        vals[3, 4, 0] = 0.5
        return Heatmap(SPEC, vals, 0.01)

    def get_major_map(self, img=None, obj=None, sound=None):
        self._log("get_major_map", img=img, obj=obj, sound=sound)
        vals = np.full(SPEC.shape, 0.5)
        vals[3, 4, 0] = 1.0
        return Heatmap(SPEC, vals, 0.1)

    def get_max_pos_3d(self, heatmap):
        self._log("get_max_pos_3d", heatmap)
        flat = int(np.argmax(heatmap.values))
        return np.array(np.unravel_index(flat, heatmap.values.shape),
                        dtype=np.float64)

    get_max_pose_3d = get_max_pos_3d

    def load_image(self, path):
        self._log("load_image", path)
        return np.zeros((2, 2))


def test_parse_simple_calls():
    prog = parse_program("robot.move_to_object('chair')\n"
                         "robot.turn(90)\n")
    assert len(prog) == 2


def test_parse_assignment_and_product():
    prog = parse_program(
        "a = robot.get_map(obj=\"table\")\n"
        "b = robot.get_map(sound=\"dog\")\n"
        "c = a * b\n"
        "pos = robot.get_max_pos_3d(c)\n"
        "robot.move_to(pos)\n"
    )
    assert len(prog) == 5


def test_parse_for_loop():
    prog = parse_program(
        "pos1 = robot.get_pos('chair')\n"
        "pos2 = robot.get_pos('table')\n"
        "for i in range(3):\n"
        "    robot.move_to(pos1)\n"
        "    robot.move_to(pos2)\n"
    )
    assert len(prog) == 3
    loop = prog.statements[2]
    assert loop.count == 3 and len(loop.body) == 2


def test_parse_rejects_import():
    with pytest.raises(ProgramParseError) as exc:
        parse_program("robot.move_to_object('chair')\nimport os\n")
    assert exc.value.line == 2


def test_parse_rejects_non_whitelisted_call():
    with pytest.raises(ProgramParseError) as exc:
        parse_program("robot.self_destruct()")
    assert "self_destruct" in str(exc.value)
    assert exc.value.line == 1
    with pytest.raises(ProgramParseError):
        parse_program("open('/etc/passwd')")


def test_parse_rejects_eval_and_bad_chars():
    with pytest.raises(ProgramParseError):
        parse_program("eval('1+1')")
    with pytest.raises(ProgramParseError) as exc:
        parse_program("robot.turn(90) @ 3")
    assert exc.value.column is not None


def test_parse_reports_position():
    with pytest.raises(ProgramParseError) as exc:
        parse_program("robot.move_to(\nrobot.unknown_fn('x')")
    assert exc.value.line in (1, 2)


def test_parse_comments_and_blank_lines_ignored():
    prog = parse_program("# go to the chair\n\nrobot.move_to_object('chair')\n")
    assert len(prog) == 1


def test_parse_empty_program():
    assert len(parse_program("")) == 0
    assert len(parse_program("# only a comment\n")) == 0


def test_format_parse_round_trip():
    code = (
        "a_map = robot.get_major_map(sound=\"crying baby\")\n"
        "b_map = robot.get_map(obj=\"table\")\n"
        "fused = a_map * b_map\n"
        "pos = robot.get_max_pos_3d(fused)\n"
        "robot.move_to(pos)\n"
        "for i in range(2):\n"
        "    robot.turn(90)\n"
    )
    prog = parse_program(code)
    printed = format_program(prog)
    assert parse_program(printed) == prog


def test_prompt_assets_load_and_examples_parse():
    for name in ("spatial", "multimodal"):
        text = load_context_prompt(name)
        assert "robot." in text
        # each bundled example must survive the restricted parser
        prog = parse_program(text)
        assert len(prog) > 0


def test_codegen_move_to_object():
    code = rule_based_codegen("# move to the chair\n")
    assert code == "robot.move_to_object('chair')"


def test_codegen_back_and_forth():
    code = rule_based_codegen("# move back and forth to the chair and the "
                              "table 3 times\n")
    prog = parse_program(code)
    loop = prog.statements[-1]
    assert loop.count == 3
    robot = FakeRobot()
    execute_program(prog, robot)
    moves = [c for c in robot.calls if c[0] == "move_to"]
    assert len(moves) == 6


def test_codegen_between_and_sides():
    assert rule_based_codegen("# move in between the chair and the sofa\n") \
        == "robot.move_in_between('chair', 'sofa')"
    assert rule_based_codegen("# move to the left side of the counter\n") \
        == "robot.move_to_left('counter')"
    assert rule_based_codegen("# move to the south side of the table\n") \
        == "robot.move_south('table')"


def test_codegen_turns_and_forward():
    assert rule_based_codegen("# turn left 60 degrees\n") == "robot.turn(-60)"
    assert rule_based_codegen("# turn right 45 degrees\n") == "robot.turn(45)"
    assert rule_based_codegen("# turn west\n") == "robot.turn_absolute(-90)"
    assert rule_based_codegen("# move forward for 2 meters\n") \
        == "robot.move_forward(2)"
    assert rule_based_codegen("# face the television\n") \
        == "robot.face('television')"
    assert rule_based_codegen("# with the table on your right\n") \
        == "robot.with_object_on_right('table')"


def test_codegen_multi_clause():
    code = rule_based_codegen(
        "# face the table, then move forward for 1 meters\n")
    assert code.splitlines() == ["robot.face('table')",
                                 "robot.move_forward(1)"]


def test_codegen_sound_queries():
    code = rule_based_codegen("# go to the sound of crying baby\n")
    prog = parse_program(code)
    robot = FakeRobot()
    execute_program(prog, robot)
    kinds = [c[0] for c in robot.calls]
    assert kinds == ["get_major_map", "get_max_pos_3d", "move_to"]
    assert robot.calls[0][2]["sound"] == "crying baby"


def test_codegen_object_near_sound():
    code = rule_based_codegen(
        "# go to the table near the sound of glass breaking\n")
    prog = parse_program(code)
    robot = FakeRobot()
    execute_program(prog, robot)
    kinds = [c[0] for c in robot.calls]
    assert kinds == ["get_major_map", "get_map", "get_max_pos_3d", "move_to"]
    assert robot.calls[0][2]["obj"] == "table"
    assert robot.calls[1][2]["sound"] == "glass breaking"


def test_codegen_between_multimodal():
    code = rule_based_codegen(
        "# move in between the sound of dog and the chair\n")
    prog = parse_program(code)
    robot = FakeRobot()
    execute_program(prog, robot)
    assert robot.calls[-1][0] == "move_to"
    # target is the midpoint of the two argmax positions
    goal = robot.calls[-1][1][0]
    assert np.allclose(goal, [3.0, 4.0, 0.0])


def test_codegen_unsupported_raises():
    with pytest.raises(UnsupportedInstructionError):
        rule_based_codegen("# do a backflip over the couch\n")
    with pytest.raises(UnsupportedInstructionError):
        rule_based_codegen("no comment block here\n")


def test_generate_plan_appends_instruction():
    provider = MockProvider(feature_dim=8)
    code = generate_plan("move to the chair", "# examples above", provider)
    assert code == "robot.move_to_object('chair')"
    with pytest.raises(UnsupportedInstructionError):
        generate_plan("   ", "# ctx", provider)


def test_execute_map_product_uses_fusion():
    prog = parse_program(
        "a = robot.get_major_map(obj=\"chair\")\n"
        "b = robot.get_map(sound=\"dog\")\n"
        "c = a * b\n"
        "pos = robot.get_max_pos_3d(c)\n"
        "robot.move_to(pos)\n"
    )
    robot = FakeRobot()
    execute_program(prog, robot)
    fused = robot.calls[2][1][0]  # heatmap passed to get_max_pos_3d
    assert isinstance(fused, Heatmap)
    # product of the two fake maps peaks where both are maximal
    assert fused.values[3, 4, 0] == pytest.approx(0.5)


def test_execute_position_average():
    prog = parse_program(
        "pos1 = robot.get_pos('chair')\n"
        "pos2 = robot.get_pos('table')\n"
        "pos = (pos1 + pos2) / 2\n"
        "robot.move_to(pos)\n"
    )
    robot = FakeRobot()
    execute_program(prog, robot)
    goal = robot.calls[-1][1][0]
    assert np.allclose(goal, [(5 + 5) / 2.0, 2.0])


def test_execute_no_target_records_failure_and_continues():
    prog = parse_program(
        "pos = robot.get_pos('unicorn')\n"
        "robot.move_to(pos)\n"
        "robot.move_to_object('chair')\n"
    )
    robot = FakeRobot()
    trace = execute_program(prog, robot)
    assert any(t["type"] == "move_to" and not t["ok"] for t in trace)
    assert robot.calls[-1] == ("move_to_object", ("chair",), {})


def test_execute_no_target_absorbs_arithmetic():
    prog = parse_program(
        "pos1 = robot.get_pos('unicorn')\n"
        "pos2 = robot.get_pos('chair')\n"
        "pos = (pos1 + pos2) / 2\n"
        "robot.move_to(pos)\n"
    )
    robot = FakeRobot()
    trace = execute_program(prog, robot)
    assert not any(c[0] == "move_to" for c in robot.calls)
    assert any(t["type"] == "move_to" and not t["ok"] for t in trace)


def test_execute_unknown_name_raises():
    with pytest.raises(ProgramParseError):
        execute_program(parse_program("robot.move_to(ghost)"), FakeRobot())
