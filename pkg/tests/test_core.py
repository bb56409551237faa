import json
import math

import numpy as np
import pytest

from balclust.core import (Assignment, Constraints, Instance, Objective, assignment_from_json,
                           assignment_to_json, averaged_kmeans_objective, check_capacities,
                           class_entropy, cost_matrix, evaluate, iter_pairs, read_instance_csv,
                           write_instance_csv)
from balclust.errors import BalclustError


def line_instance():
    return Instance.from_points(np.array([[0.0], [1.0], [3.0], [6.0]]))


def test_instance_distances_are_symmetric():
    inst = line_instance()
    d = inst.distances
    assert np.allclose(d, d.T)
    assert d[0, 3] == pytest.approx(6.0)
    assert inst.sq_distances[1, 2] == pytest.approx(4.0)


def test_metric_violation_found():
    d = np.array([[0, 1, 5], [1, 0, 1], [5, 1, 0]], dtype=float)
    assert Instance.from_distances(d).metric_violation() is not None
    assert line_instance().metric_violation() is None


def test_constraints_validation():
    with pytest.raises(BalclustError):
        Constraints(k=0)
    with pytest.raises(BalclustError):
        Constraints(k=2, p=3)
    with pytest.raises(BalclustError):
        Constraints(k=2, ell=0.6, cap_L=0.5)
    c = Constraints(k=3, p=1, ell=0.2, cap_L=0.5)
    assert c.lower_count(10) == 2 and c.upper_count(10) == 5


def test_kmedian_single_center():
    inst = line_instance()
    a = Assignment.from_labels([0, 0, 0, 0], centers=[1])
    assert evaluate(inst, a, "kmedian") == pytest.approx(1 + 0 + 2 + 5)
    assert evaluate(inst, a, Objective.KMEANS) == pytest.approx(1 + 0 + 4 + 25)
    assert evaluate(inst, a, "kcenter") == pytest.approx(5)


def test_averaged_objective_cases():
    inst = line_instance()
    single = Assignment.from_labels([0, 0, 1, 1], centers=[0, 3])
    assert averaged_kmeans_objective(inst, single) == pytest.approx(evaluate(inst, single, "kmeans"))
    mult = np.ones((2, 4), dtype=int)
    double = Assignment.from_matrix([0, 3], mult)
    assert averaged_kmeans_objective(inst, double) == pytest.approx(evaluate(inst, double, "kmeans") / 2)
    # mixed: point 0 served once by center 0, point 3 served by both
    m = np.array([[1, 1, 0, 1], [0, 0, 1, 1]])
    mixed = Assignment.from_matrix([0, 3], m)
    hand = 0 + 1 + 9 + (36 + 0) / 2
    assert averaged_kmeans_objective(inst, mixed) == pytest.approx(hand)


def test_class_entropy_values():
    pure = Assignment.from_labels([0, 0, 1, 1])
    assert class_entropy(pure, ["a", "a", "b", "b"]) == 0.0
    one = Assignment.from_labels([0, 0])
    assert class_entropy(one, [0, 1]) == pytest.approx(1.0)
    two = Assignment.from_labels([0, 0, 0, 0, 1, 1])
    val = class_entropy(two, [0, 0, 0, 1, 0, 1])
    assert val == pytest.approx((0.811278 + 1) / 2, abs=1e-6)


def test_check_capacities_factors():
    a = Assignment.from_labels([0] * 8 + [1] * 6)
    rep = check_capacities(a, Constraints(k=2, ell=0.1, cap_L=0.5))
    assert rep.max_upper_factor == pytest.approx(8 / 7)
    assert not rep.feasible
    ok = check_capacities(Assignment.from_labels([0] * 7 + [1] * 7), Constraints(k=2, ell=0.1, cap_L=0.5))
    assert ok.feasible and ok.max_upper_factor == 1.0


def test_kcenter_cost_matrix_threshold():
    cm = cost_matrix(line_instance(), "kcenter", 2.0)
    assert cm.c[0, 1] == 2.0 and math.isinf(cm.c[0, 3])


def test_csv_roundtrip(tmp_path):
    inst = Instance.from_points(np.arange(12, dtype=float).reshape(4, 3), labels=np.array([0, 1, 0, 1]))
    path = tmp_path / "pts.csv"
    write_instance_csv(path, inst)
    back = read_instance_csv(path)
    assert np.allclose(back.points, inst.points)
    assert list(back.labels) == [0, 1, 0, 1]


def test_distance_csv_roundtrip(tmp_path):
    inst = Instance.from_distances(np.array([[0.0, 1.5], [1.5, 0.0]]))
    path = tmp_path / "d.csv"
    write_instance_csv(path, inst)
    back = read_instance_csv(path)
    assert np.allclose(back.distances, inst.distances)


def test_assignment_json_roundtrip():
    a = Assignment.from_matrix([2, 0], np.array([[1, 2, 0], [1, 0, 2]]))
    doc = assignment_to_json(a, "kmedian", 3.0)
    text = json.dumps(doc) if not isinstance(doc, str) else doc
    back = assignment_from_json(text)
    assert back.centers == a.centers
    assert np.array_equal(back.multiplicity_matrix(), a.multiplicity_matrix())
    assert sorted(iter_pairs(a)) == sorted(iter_pairs(back))
