import numpy as np
import pytest
import yaml

from seqgraph.design_io import (
    StageData,
    design_from_dict,
    dump_design,
    load_design,
    load_scenario,
    read_stage_data,
    serialize_design,
)
from seqgraph.errors import ParseError, ValidationError

DESIGN = "designs/hierarchical4.yaml"
DATA = "designs/hierarchical4_stages.csv"
SCENARIO = "designs/scenario_global_null.yaml"


def write(tmp_path, text, name="d.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadDesign:
    def test_example_design_valid(self):
        d = load_design(DESIGN)
        assert d.m == 4 and d.n_stages == 2
        assert d.alpha == 0.025
        assert d.names == ["H1", "H2", "H3", "H4"]
        assert np.allclose(d.graph.weights, [1, 0, 0, 0])
        assert d.q == 0.3

    def test_weights_exceeding_one(self, tmp_path):
        doc = yaml.safe_load(open(DESIGN))
        doc["initial_weights"] = [0.8, 0.4, 0, 0]
        with pytest.raises(ValidationError):
            design_from_dict(doc)

    def test_missing_transition_row_is_parse_or_validation_error(self, tmp_path):
        p = write(
            tmp_path,
            "alpha: 0.025\ninitial_weights: [1, 0]\ntransition:\n  - [0, 1]\n"
            "stages: 1\nspending: {kind: pocock_like}\ninformation_fractions: [1.0]\n",
        )
        with pytest.raises(ValidationError):
            load_design(p)

    def test_yaml_syntax_error_carries_position(self, tmp_path):
        p = write(tmp_path, "alpha: 0.025\ntransition: [[0, 1]\n")
        with pytest.raises(ParseError) as exc:
            load_design(p)
        assert exc.value.line is not None

    def test_unknown_keys_rejected(self, tmp_path):
        doc = yaml.safe_load(open(DESIGN))
        doc["alfa"] = 0.05
        with pytest.raises(ValidationError, match="alfa"):
            design_from_dict(doc)

    def test_missing_required_keys(self):
        with pytest.raises(ValidationError, match="missing"):
            design_from_dict({"alpha": 0.025})

    def test_fraction_schedule_mismatch(self):
        doc = yaml.safe_load(open(DESIGN))
        doc["information_fractions"] = [0.5]
        with pytest.raises(ValidationError):
            design_from_dict(doc)

    def test_per_hypothesis_spending(self):
        doc = yaml.safe_load(open(DESIGN))
        doc["spending"] = [
            {"kind": "pocock_like"},
            {"kind": "power", "rho": 2.0},
            {"kind": "pocock_like"},
            {"kind": "obf_like"},
        ]
        d = design_from_dict(doc)
        assert d.plans[1].spending.rho == 2.0

    def test_bad_spending_kind(self):
        doc = yaml.safe_load(open(DESIGN))
        doc["spending"] = {"kind": "bonferroni"}
        with pytest.raises(ValidationError):
            design_from_dict(doc)

    def test_round_trip(self, tmp_path):
        d = load_design(DESIGN)
        out = tmp_path / "copy.yaml"
        dump_design(d, out)
        d2 = load_design(out)
        assert serialize_design(d) == serialize_design(d2)
        assert np.array_equal(d.graph.transition, d2.graph.transition)

    def test_round_trip_key_order_independent(self, tmp_path):
        doc = serialize_design(load_design(DESIGN))
        shuffled = dict(reversed(list(doc.items())))
        assert serialize_design(design_from_dict(shuffled)) == doc


class TestScenario:
    def test_example_scenario(self):
        spec, design, runs = load_scenario(SCENARIO)
        assert spec.n_reps == 2000 and spec.m == 4
        assert len(runs) == 3
        assert runs[0]["metric"] == "fwer"

    def test_scenario_requires_theta(self, tmp_path):
        doc = yaml.safe_load(open(SCENARIO))
        del doc["theta"]
        p = write(tmp_path, yaml.safe_dump(doc))
        with pytest.raises(ValidationError, match="theta"):
            load_scenario(p)


class TestStageData:
    def test_example_data(self):
        design = load_design(DESIGN)
        data = read_stage_data(DATA, design)
        assert data.last_stage == 1
        assert data.taus.tolist() == [1, 1, 1, 1]
        fam = data.family(design)
        assert fam.repeated(0, 0) == pytest.approx(0.02, abs=1e-6)
        assert fam.repeated(3, 1) == pytest.approx(0.01, abs=1e-6)

    def test_empty_csv(self, tmp_path):
        design = load_design(DESIGN)
        p = write(tmp_path, "hypothesis,stage,estimate,std_error,info_fraction,stopped\n", "d.csv")
        with pytest.raises(ValidationError, match="no observations"):
            read_stage_data(p, design)

    def test_wrong_columns(self, tmp_path):
        design = load_design(DESIGN)
        p = write(tmp_path, "hyp,stage\nH1,1\n", "d.csv")
        with pytest.raises(ValidationError, match="columns"):
            read_stage_data(p, design)

    def test_fraction_mismatch(self, tmp_path):
        design = load_design(DESIGN)
        p = write(
            tmp_path,
            "hypothesis,stage,estimate,std_error,info_fraction,stopped\nH1,1,1.0,1.0,0.6,false\n",
            "d.csv",
        )
        with pytest.raises(ValidationError, match="info_fraction"):
            read_stage_data(p, design)

    def test_numeric_index_and_stop_marking(self, tmp_path):
        design = load_design(DESIGN)
        p = write(
            tmp_path,
            "hypothesis,stage,estimate,std_error,info_fraction,stopped\n"
            "1,1,1.0,1.0,0.5,true\n2,1,0.5,1.0,0.5,false\n",
            "d.csv",
        )
        data = read_stage_data(p, design)
        assert data.taus.tolist() == [0, 1, 1, 1]
        assert np.isnan(data.estimates[2, 0])
