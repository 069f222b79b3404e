import json
import math

import numpy as np
import pytest

from featnet.trace import RunTrace, comm_per_edge_per_iter, write_summary


def test_csv_roundtrip_preserves_values_and_config(tmp_path):
    trace = RunTrace("vrd2", config={"version": 1, "algorithm": {"mu": 0.1}})
    trace.add(iteration=0, risk=0.5, excess_risk=0.25, comm_net=1)
    trace.add(iteration=1, risk=0.25, comm_net=2, unbias_max=1e-15)
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    back = RunTrace.from_csv(path)
    assert back.algorithm == "vrd2"
    assert back.config == trace.config
    assert np.array_equal(back.column("iteration"), [0.0, 1.0])
    assert back.column("risk")[1] == 0.25
    assert math.isnan(back.column("unbias_max")[0])
    assert back.column("unbias_max")[1] == 1e-15
    assert math.isnan(back.column("excess_risk")[1])


def test_csv_floats_roundtrip_exactly(tmp_path):
    val = 1.0 / 3.0
    trace = RunTrace("naive")
    trace.add(iteration=0, risk=val)
    path = tmp_path / "t.csv"
    trace.to_csv(path)
    assert RunTrace.from_csv(path).column("risk")[0] == val


def test_summary_reports_final_values():
    trace = RunTrace("pvrd2")
    trace.add(iteration=0, risk=1.0)
    trace.add(iteration=9, risk=0.1)
    trace.n_iterations = 10
    s = trace.summary()
    assert s["final_risk"] == 0.1
    assert s["iterations"] == 10
    assert s["records"] == 2


def test_comm_pvrd2_paper_value():
    # J=10 stages, C=10 classes, B=10 batch: 1000 scalars per edge per iter.
    assert comm_per_edge_per_iter("pvrd2", J=10, C=10, B=10) == 1000
    assert comm_per_edge_per_iter("pvrd2", J=10, C=10, B=10, gross=True) == 2000


def test_comm_model_distributed_paper_value():
    # Full-model convention with M=3072 features and C=10 classes.
    assert comm_per_edge_per_iter("model_distributed", C=10, M=3072) == 30720
    assert comm_per_edge_per_iter("model_distributed", C=10, M=3072,
                                  K=28, convention="block") == -(-3072 // 28) * 10


def test_comm_other_methods():
    assert comm_per_edge_per_iter("naive", C=3) == 3
    assert comm_per_edge_per_iter("vrd2", C=2, B=1) == 2
    assert comm_per_edge_per_iter("vrd2", C=2, gross=True) == 4
    assert comm_per_edge_per_iter("centralized_sgd") == 0


def test_comm_rejects_bad_args():
    with pytest.raises(ValueError):
        comm_per_edge_per_iter("model_distributed", C=10)
    with pytest.raises(ValueError):
        comm_per_edge_per_iter("model_distributed", M=10, convention="sparse")
    with pytest.raises(ValueError):
        comm_per_edge_per_iter("gossip")


def test_write_summary(tmp_path):
    path = tmp_path / "s.json"
    write_summary(path, {"b": 1, "a": {"x": 2.5}})
    obj = json.loads(path.read_text())
    assert obj == {"b": 1, "a": {"x": 2.5}}
