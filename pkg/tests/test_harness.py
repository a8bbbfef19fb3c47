import json
from pathlib import Path

import numpy as np
import pytest

from coupledpd import DegenerateReference, InstanceFormatError, LowAccuracy, kkt_residual, validate
from coupledpd.functions import Affine
from coupledpd.harness import io
from coupledpd.harness.bench import bench_random, trial_seed
from coupledpd.harness.cli import main
from coupledpd.harness.examples import EXAMPLE1, RandomInstanceSpec, build_example1, gen_random_instance
from coupledpd.harness.reference import ReferenceConfig, reference_solution, relative_error

from test_dynamics import single

INSTANCES = sorted((Path(__file__).parent.parent / "instances").glob("*.json"))


def test_example1_constants(example1):
    assert EXAMPLE1.a[2] == (0.13, 8) and EXAMPLE1.x0[3] == (10, 5)
    g11 = example1.agents[0].constraint.value(np.array([2.0, 6.0]))[0]
    assert g11 == pytest.approx(np.sqrt(40) - 6, abs=1e-12)
    assert example1.agents[2].set.contains([5.0, 4.0])
    assert example1.n_agents == 4 and len(example1.graph.edges) == 4
    assert example1.m_constraints == 2 and all(a.dim == 2 for a in example1.agents)


def test_random_instance_slater_margin():
    p = gen_random_instance(RandomInstanceSpec(10, 5, seed=3, margin=0.1))
    assert np.allclose(p.coupled_constraint(p.slater_point), -0.1, atol=1e-12)


def test_random_instance_deterministic():
    a = io.serialize(gen_random_instance(RandomInstanceSpec(10, 5, seed=11)))
    b = io.serialize(gen_random_instance(RandomInstanceSpec(10, 5, seed=11)))
    c = io.serialize(gen_random_instance(RandomInstanceSpec(10, 5, seed=12)))
    assert a == b and a != c


@pytest.mark.parametrize("seed", range(5))
def test_random_instance_validates(seed):
    p = gen_random_instance(RandomInstanceSpec(10, 5, seed=seed))
    rep = validate(p)
    assert rep.ok and p.graph.connected


def test_random_spec_guards():
    with pytest.raises(ValueError):
        RandomInstanceSpec(1)
    with pytest.raises(ValueError):
        RandomInstanceSpec(3, margin=0.0)


def test_reference_1d(one_d):
    x, lam = reference_solution(one_d)
    assert x[0] == pytest.approx(0.5, abs=1e-5) and lam[0] == pytest.approx(3.0, abs=1e-5)


def test_reference_inactive():
    p = single(0, 1, Affine([1.0], 0.0) + Affine([0.0], 0.0), [Affine([1.0], -0.5)])
    x, lam = reference_solution(p)
    assert lam[0] == pytest.approx(0.0, abs=1e-6) and x[0] == pytest.approx(0.0, abs=1e-8)


def test_reference_low_accuracy(one_d):
    with pytest.raises(LowAccuracy) as info:
        reference_solution(one_d, ReferenceConfig(max_rounds=50, chunk=10))
    assert info.value.report is not None


def test_relative_error():
    xs = np.array([0.5, -1.0, 0.25])
    assert relative_error(xs, xs) == 0.0
    assert relative_error(2 * xs, xs) == pytest.approx(1.0)
    with pytest.raises(DegenerateReference):
        relative_error(xs, np.zeros(3))


def test_relative_error_blocks(example1):
    x = example1.initial_point()
    assert relative_error(x, x, example1) == 0.0
    assert relative_error(0 * x, x, example1) == pytest.approx(1.0)


@pytest.mark.parametrize("path", INSTANCES, ids=lambda p: p.name)
def test_shipped_files_roundtrip(path):
    text = path.read_text()
    assert io.serialize(io.parse(text)) == text


def test_roundtrip_preserves_semantics(example1):
    q = io.parse(io.serialize(example1))
    x = example1.initial_point()
    assert np.array_equal(q.initial_point(), x)
    assert q.cost(x) == example1.cost(x)
    assert q.graph == example1.graph


@pytest.mark.parametrize("text", ["not json", "[]", '{"n_agents": 1}',
                                  '{"n_agents": 1, "m_constraints": 1, "edges": [], "agents": [{"dim": 1, '
                                  '"set": {"type": "blob"}, "cost": {}, "constraint": {}}]}'])
def test_malformed_instances(text):
    with pytest.raises(InstanceFormatError):
        io.parse(text)


def test_cli_validate(tmp_path, capsys):
    assert main(["validate", str(INSTANCES[0])]) == 0
    doc = json.loads(INSTANCES[0].read_text())
    doc["edges"] = doc["edges"][:1] if doc["n_agents"] > 2 else []
    if doc["n_agents"] < 2:
        pytest.skip("needs a multi-agent file")
    bad = tmp_path / "bad.json"
    bad.write_text(io.dumps(doc))
    assert main(["validate", str(bad)]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_cli_malformed(tmp_path, capsys):
    f = tmp_path / "x.json"
    f.write_text("{")
    assert main(["validate", str(f)]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_run_and_certify(tmp_path, capsys):
    out = tmp_path / "run"
    src = [p for p in INSTANCES if p.name == "two_agent_asymmetric.json"][0]
    assert main(["run", str(src), "--T", "20", "--h", "1e-3", "--out", str(out)]) == 0
    for name in ("instance.json", "trajectory.csv", "averages.csv", "summary.json"):
        assert (out / name).exists()
    header = (out / "trajectory.csv").read_text().splitlines()[0].split(",")
    assert header == ["t", "x_1_1", "x_2_1", "lam_1_1", "lam_2_1", "V", "W", "phi", "viol", "kkt"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["consensus_residual"] < 1e-3 and summary["x_error_inf"] < 1e-3
    assert main(["certify", str(out)]) == 0
    assert "ok" in capsys.readouterr().out


def test_bench_reproducible():
    a = bench_random(4, 2, trials=3, seed=5, step_h=1e-2, horizon_T=20, times=(5.0, 20.0))
    b = bench_random(4, 2, trials=3, seed=5, step_h=1e-2, horizon_T=20, times=(5.0, 20.0))
    assert np.array_equal(a.errors, b.errors) and a.table().splitlines()[:2] == b.table().splitlines()[:2]
    assert a.errors.shape[0] + a.degenerate == 3
    assert trial_seed(5, 0) != trial_seed(5, 1)


def test_cli_bench(capsys):
    assert main(["bench-random", "--n", "3", "--m", "1", "--trials", "2", "--T", "5"]) == 0
    assert "e(t=100)" in capsys.readouterr().out
