"""Smoke test for the perclab extension module.

Build and install first:  pip install ./crates/py --no-build-isolation
"""

import json
import math
import tempfile

import perclab

MODEL = """
model { dim = 2 }
kernel { family = long_range, beta = 1, delta = 1.5 }
"""


def main():
    k = perclab.Kernel.long_range(2, 1.0, 1.5)
    assert math.isclose(k.phi(0.5, 0.5, 2.0), 2.0 ** -3)
    slope, _ = k.delta_eff(0.1)
    assert abs(slope - 1.5) < 0.05, slope

    model = perclab.Model(MODEL)
    g = model.sample_graph(16.0, seed=3)
    assert g.vertex_count > 0
    assert len(g.edges()) == g.edge_count
    assert g.largest_component_size() <= g.vertex_count
    assert g.bond_percolate(0.5, 1).edge_count <= g.edge_count
    assert g.truncate(2.0).edge_count <= g.edge_count
    again = model.sample_graph(16.0, seed=3)
    assert again.edges() == g.edges()

    lattice = perclab.Network.lattice(21, 2)
    curve = lattice.transience_probe(220, [1, 2, 4, 8])
    assert curve["monotone"] and curve["values"][0] == 3.0
    assert all(a > b for a, b in zip(curve["values"], curve["values"][1:]))

    assert perclab.validate("")["violations"] == []
    bad = perclab.validate("renorm { omega = 1.0 }")
    assert "OmegaBound" in [v["constraint"] for v in bad["violations"]], bad

    reg = perclab.regularity_check(100_000, 0.45, 100, 1)
    assert reg["lemma"] == "regularity" and reg["pass"]

    out = perclab.execute("delta-eff", MODEL + "experiment { mu = [0.0] }")
    row = out["delta_eff.csv"].splitlines()[1].split(",")
    assert abs(float(row[1]) - 1.5) < 0.05

    with tempfile.TemporaryDirectory() as d:
        m = perclab.run("generate", MODEL + "experiment { n = 8 }", d, seed=5)
        assert m["seed"] == 5 and not m["partial"]
        with open(f"{d}/manifest.json") as f:
            assert json.load(f)["outputs"] == ["cloud.csv"]

    print(f"perclab {perclab.__version__}: python smoke test passed")


if __name__ == "__main__":
    main()
