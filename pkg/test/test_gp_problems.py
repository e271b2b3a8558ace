import re
from importlib import resources

import pytest

from voluntier.errors import ConfigurationError, UnsupportedProblemError
from voluntier.gp.engine import random_tree
from voluntier.gp.primitives import PrimitiveSet
from voluntier.gp.problems import (
    EvalReport,
    evaluate,
    evaluate_multiplexer,
    evaluate_santa_fe,
    load_trail,
    multiplexer_cases,
    multiplexer_tables,
    parse_trail,
)
from voluntier.gp.rng import PortableRng
from voluntier.gp.tree import ProgramTree

KOZA_ANT = ("(IF-FOOD-AHEAD MOVE (PROGN3 LEFT (PROGN2 (IF-FOOD-AHEAD MOVE RIGHT) "
            "(PROGN2 RIGHT (PROGN2 LEFT RIGHT))) (PROGN2 (IF-FOOD-AHEAD MOVE LEFT) MOVE)))")
PERFECT_MUX6 = "(IF a1 (IF a0 d3 d2) (IF a0 d1 d0))"
PERFECT_MUX11 = "(IF a2 (IF a1 (IF a0 d7 d6) (IF a0 d5 d4)) (IF a1 (IF a0 d3 d2) (IF a0 d1 d0)))"


def _mux_oracle(tree, k):
    """Case by case interpretation, independent of the packed truth tables."""
    def run(pos, env):
        name = tree.nodes[pos]
        if name in env:
            return env[name], pos + 1
        if name == "NOT":
            value, pos = run(pos + 1, env)
            return 1 - value, pos
        args = []
        pos += 1
        for _ in range(3 if name == "IF" else 2):
            value, pos = run(pos, env)
            args.append(value)
        if name == "AND":
            return args[0] & args[1], pos
        if name == "OR":
            return args[0] | args[1], pos
        return (args[1] if args[0] else args[2]), pos

    hits = 0
    for case in range(multiplexer_cases(k)):
        env = {f"a{j}": (case >> j) & 1 for j in range(k)}
        env.update({f"d{m}": (case >> (k + m)) & 1 for m in range(2 ** k)})
        address = sum(env[f"a{j}"] << j for j in range(k))
        if run(0, env)[0] == env[f"d{address}"]:
            hits += 1
    return hits


def _ant_oracle(text, steps_limit):
    """Walks the nested expression directly on the raw trail grid."""
    tokens = re.findall(r"\(|\)|[^\s()]+", text)

    def parse(i):
        if tokens[i] == "(":
            node = [tokens[i + 1]]
            i += 2
            while tokens[i] != ")":
                child, i = parse(i)
                node.append(child)
            return node, i + 1
        return tokens[i], i + 1

    program, _ = parse(0)
    rows = _trail_rows()
    food = {(r, c) for r, row in enumerate(rows) for c, ch in enumerate(row) if ch == "#"}
    state = {"pos": (0, 0), "dir": (0, 1), "steps": 0, "eaten": 0}

    def ahead():
        (r, c), (dr, dc) = state["pos"], state["dir"]
        return (r + dr) % 32, (c + dc) % 32

    def done():
        return state["steps"] >= steps_limit or not food

    def run(node):
        if isinstance(node, list):
            if node[0] == "IF-FOOD-AHEAD":
                run(node[1] if ahead() in food else node[2])
            else:
                for child in node[1:]:
                    if done():
                        return
                    run(child)
            return
        if done():
            return
        state["steps"] += 1
        if node == "MOVE":
            state["pos"] = ahead()
            if state["pos"] in food:
                food.discard(state["pos"])
                state["eaten"] += 1
        elif node == "LEFT":
            dr, dc = state["dir"]
            state["dir"] = (-dc, dr)
        else:
            dr, dc = state["dir"]
            state["dir"] = (dc, -dr)

    while not done():
        run(program)
    return state["eaten"]


def _trail_rows():
    text = (resources.files("voluntier.gp") / "data" / "santafe.trail").read_text(encoding="utf-8")
    return [line for line in text.splitlines() if line.strip()]


class TestEvalReport:
    def test_twenty_multiplexer_triple(self):
        report = EvalReport(hits=868352, total_cases=multiplexer_cases(4))
        assert report.raw == 180224.0
        assert f"{report.adjusted:.6g}" == "5.54862e-06"
        assert report.as_dict() == {"hits": 868352, "raw": 180224.0, "adjusted": report.adjusted,
                                    "total_cases": 1048576}

    def test_perfect(self):
        report = EvalReport(hits=2048, total_cases=2048)
        assert report.perfect
        assert report.raw == 0.0
        assert report.adjusted == 1.0


class TestMultiplexer:
    def test_case_counts(self):
        assert multiplexer_cases(2) == 64
        assert multiplexer_cases(3) == 2048

    def test_tautology_hits_half(self):
        pset = PrimitiveSet.multiplexer(3)
        report = evaluate_multiplexer(ProgramTree.parse_sexpr("(OR a0 (NOT a0))", pset), 3)
        assert report.hits == 1024
        assert report.total_cases == 2048

    def test_perfect_six_multiplexer(self):
        pset = PrimitiveSet.multiplexer(2)
        assert evaluate_multiplexer(ProgramTree.parse_sexpr(PERFECT_MUX6, pset), 2).hits == 64

    def test_perfect_eleven_multiplexer(self):
        pset = PrimitiveSet.multiplexer(3)
        report = evaluate(ProgramTree.parse_sexpr(PERFECT_MUX11, pset), pset)
        assert report.hits == 2048
        assert report.perfect

    @pytest.mark.parametrize("k", [1, 2])
    def test_matches_case_by_case_oracle(self, k):
        pset = PrimitiveSet.multiplexer(k)
        rng = PortableRng(2024 + k)
        for _ in range(250):
            tree = random_tree(pset, rng, rng.below(6))
            assert evaluate_multiplexer(tree, k).hits == _mux_oracle(tree, k)

    def test_too_many_cases_rejected(self):
        with pytest.raises(UnsupportedProblemError):
            multiplexer_tables(5)

    def test_foreign_primitive_rejected(self):
        with pytest.raises(ConfigurationError):
            evaluate_multiplexer(ProgramTree(("MOVE",)), 3)


class TestSantaFe:
    @pytest.fixture
    def ant(self):
        return PrimitiveSet.santa_fe()

    def test_trail_file(self):
        trail = load_trail()
        assert trail.total_food == 89
        assert trail.start == (0, 0)

    def test_left_never_eats(self, ant):
        assert evaluate_santa_fe(ProgramTree(("LEFT",))).hits == 0

    def test_move_eats_straight_row(self, ant):
        report = evaluate_santa_fe(ProgramTree(("MOVE",)))
        assert report.hits == 3
        assert report.total_cases == 89

    @pytest.mark.parametrize("limit", [50, 200, 400])
    def test_koza_solution_matches_oracle(self, ant, limit):
        tree = ProgramTree.parse_sexpr(KOZA_ANT, ant)
        assert evaluate_santa_fe(tree, steps_limit=limit).hits == _ant_oracle(KOZA_ANT, limit)

    def test_koza_solution_clears_trail(self, ant):
        tree = ProgramTree.parse_sexpr(KOZA_ANT, ant)
        assert evaluate_santa_fe(tree, steps_limit=2000).hits == 89

    def test_eaten_monotone_in_steps(self, ant):
        tree = ProgramTree.parse_sexpr(KOZA_ANT, ant)
        eaten = [evaluate_santa_fe(tree, steps_limit=limit).hits for limit in range(0, 600, 25)]
        assert eaten == sorted(eaten)
        assert max(eaten) <= 89

    def test_random_programs_match_oracle(self, ant):
        rng = PortableRng(99)
        for _ in range(30):
            tree = random_tree(ant, rng, 4, force_function=True)
            text = tree.to_sexpr(ant)
            assert evaluate_santa_fe(tree, steps_limit=150).hits == _ant_oracle(text, 150)

    def test_bad_trail_rejected(self):
        with pytest.raises(ConfigurationError):
            parse_trail("S##\n")
        with pytest.raises(ConfigurationError):
            parse_trail("\n".join(["." * 32] * 32))

    def test_wrong_food_count_rejected(self):
        rows = _trail_rows()
        r, c = next((r, c) for r, row in enumerate(rows) for c, cell in enumerate(row) if cell == "#")
        rows[r] = rows[r][:c] + "." + rows[r][c + 1:]
        with pytest.raises(ConfigurationError, match="88 food pellets"):
            parse_trail("\n".join(rows))

    def test_extra_food_in_custom_file_rejected(self, tmp_path):
        rows = _trail_rows()
        r, c = next((r, c) for r, row in enumerate(rows) for c, cell in enumerate(row) if cell == ".")
        rows[r] = rows[r][:c] + "#" + rows[r][c + 1:]
        path = tmp_path / "extra.trail"
        path.write_text("\n".join(rows))
        with pytest.raises(ConfigurationError):
            load_trail(str(path))

    def test_missing_trail_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_trail(str(tmp_path / "absent.trail"))
