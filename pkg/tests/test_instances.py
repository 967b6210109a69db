import json

import numpy as np
import pytest

from mmwqsdp import core, instances, mmw, oracle, orsim
from mmwqsdp.errors import ContractViolation, UsageError


@pytest.mark.parametrize("kind,params", [
    ("lower-bound", {"n": 4, "m": 3}),
    ("planted-feasible", {"n": 6, "m": 5}),
    ("grover-or", {"m": 8, "k": 3}),
    ("low-rank-gibbs", {"n": 8}),
    ("rank1-measurements", {"n": 8, "m": 12}),
    ("random-state", {"n": 5}),
])
def test_generate_deterministic(kind, params):
    a = instances.dumps(instances.generate(kind, 7, **params))
    b = instances.dumps(instances.generate(kind, 7, **params))
    assert a == b
    assert instances.dumps(instances.generate(kind, 8, **params)) != a or kind in ("lower-bound", "grover-or")


def test_matrix_round_trip_bit_exact(tmp_path):
    doc = instances.planted_feasible(5, 4, seed=3)
    path = tmp_path / "sdp.json"
    instances.save(doc, path)
    inst = instances.to_sdp(instances.read(path))
    orig = instances.to_sdp(doc)
    assert np.array_equal(inst.stack, orig.stack)
    assert np.array_equal(inst.bounds, orig.bounds)
    enc = instances.encode_matrix(orig.stack[0])
    assert np.array_equal(instances.decode_matrix(json.loads(json.dumps(enc))), orig.stack[0])


def test_planted_witness_feasible():
    doc = instances.generate("planted-feasible", 2, margin=0.05)
    inst = instances.to_sdp(doc)
    witness = instances.to_state(doc, "witness")
    assert oracle.exact_violation_search(inst, witness).feasible


def test_lower_bound_structure():
    inst = instances.to_sdp(instances.lower_bound(4, 3, seed=7))
    assert inst.epsilon == 0.25 and inst.m == 3
    res = mmw.solve_feasibility(inst, oracle.ExactOracle(inst), None)
    assert res.verdict == "Infeasible"


def test_grover_fixture_case1():
    inst = instances.to_or_instance(instances.grover_or(8, 3))
    assert orsim.gap_verdict(inst, 2000, core.Rng(0)).case == "case-1"


def test_read_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"kind": "sdp",\n "n": 2,,}')
    with pytest.raises(UsageError, match="line 2"):
        instances.read(bad)
    bad.write_text('{"kind": "banana"}')
    with pytest.raises(UsageError, match="kind"):
        instances.read(bad)
    with pytest.raises(UsageError):
        instances.read(tmp_path / "missing.json")
    with pytest.raises(UsageError):
        instances.expect_kind({"kind": "state"}, "sdp")


def test_decode_rejects_bad_shapes():
    with pytest.raises(UsageError, match="operators"):
        instances.decode_matrix([[1.0, 2.0]], "operators[0]")
    with pytest.raises(UsageError):
        instances.decode_matrix("nope")


def test_loader_enforces_invariants():
    doc = instances.planted_feasible(3, 2, seed=1)
    doc["constraints"][0] = instances.encode_matrix(3 * np.eye(3))
    with pytest.raises(ContractViolation):
        instances.to_sdp(doc)


def test_generate_range_checks():
    with pytest.raises(UsageError):
        instances.generate("lower-bound", 0, n=1000)
    with pytest.raises(UsageError):
        instances.generate("lower-bound", 0, bogus=3)
    with pytest.raises(UsageError):
        instances.generate("no-such-kind", 0)
