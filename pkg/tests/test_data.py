"""
Tests for dataset loading, validation and views.
"""

import json

import numpy as np
import pytest

from causalfuse import (
    CovariateSet,
    DataError,
    DatasetSchema,
    Design,
    EstimationWarning,
    FusedDataset,
    UnitRecord,
    load_csv,
    main_view,
    validation_view,
    write_csv,
)

SIX_ROWS = """id,a,y,x1,u1,validation
1,1,2.0,0.1,0.5,1
2,0,1.0,0.2,0.3,1
3,1,1.5,0.3,0.4,1
4,0,0.5,0.4,0.6,1
5,1,2.5,0.5,,0
6,0,0.7,0.6,,0
"""


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadCsv:
    """Tests for load_csv."""

    def test_six_rows(self, tmp_path):
        """Test a 6-row file with 2 validation rows per arm."""
        d = load_csv(_write(tmp_path, SIX_ROWS))
        assert d.n1 == 6
        assert d.n2 == 4
        assert d.p == 1 and d.q == 1
        assert d.design is Design.SIMPLE_RANDOM
        assert list(d.ids) == ["1", "2", "3", "4", "5", "6"]

    def test_empty_u_on_validation_row(self, tmp_path):
        """Test a validation row with empty U is rejected."""
        text = SIX_ROWS.replace("2,0,1.0,0.2,0.3,1", "2,0,1.0,0.2,,1")
        message = "incomplete confounder on validation unit 2"
        with pytest.raises(DataError, match=message):
            load_csv(_write(tmp_path, text))

    def test_zero_inclusion_probability(self, tmp_path):
        """Test pi = 0 is rejected."""
        lines = SIX_ROWS.strip().split("\n")
        text = lines[0] + ",pi\n" + "\n".join(
            line + (",0" if i == 2 else ",0.5")
            for i, line in enumerate(lines[1:])
        )
        with pytest.raises(
            DataError, match="inclusion probability must be positive"
        ):
            load_csv(_write(tmp_path, text))

    def test_inclusion_probability_sets_design(self, tmp_path):
        """Test a pi column gives a known-inclusion design."""
        lines = SIX_ROWS.strip().split("\n")
        text = lines[0] + ",pi\n" + "\n".join(
            line + ",0.5" for line in lines[1:]
        )
        d = load_csv(_write(tmp_path, text))
        assert d.design is Design.KNOWN_INCLUSION
        np.testing.assert_array_equal(validation_view(d).weights, [2.0] * 4)
        np.testing.assert_array_equal(main_view(d).weights, np.ones(6))

    def test_missing_column(self, tmp_path):
        """Test a missing outcome column is reported."""
        text = SIX_ROWS.replace("id,a,y,", "id,a,outcome,")
        with pytest.raises(DataError, match="missing column: y"):
            load_csv(_write(tmp_path, text))

    def test_non_binary_treatment(self, tmp_path):
        """Test treatment values other than 0/1 are rejected."""
        text = SIX_ROWS.replace("3,1,1.5", "3,2,1.5")
        with pytest.raises(DataError, match="non-binary treatment"):
            load_csv(_write(tmp_path, text))

    def test_missing_outcome(self, tmp_path):
        """Test an empty Y cell is a load error."""
        text = SIX_ROWS.replace("4,0,0.5", "4,0,")
        with pytest.raises(DataError, match="missing value in column y"):
            load_csv(_write(tmp_path, text))

    def test_non_numeric_outcome(self, tmp_path):
        """Test a text cell in a numeric column names the column."""
        text = SIX_ROWS.replace("4,0,0.5", "4,0,high")
        with pytest.raises(DataError, match="non-numeric value 'high'"):
            load_csv(_write(tmp_path, text))

    def test_shortest_repr_parsed_exactly(self, tmp_path):
        """Test 17-digit decimals load to the exact double."""
        text = SIX_ROWS.replace("1,1,2.0,", "1,1,0.30000000000000004,")
        d = load_csv(_write(tmp_path, text))
        assert d.y[0] == 0.1 + 0.2

    def test_single_validation_row_in_arm(self, tmp_path):
        """Test an arm with one validation row is rejected."""
        text = SIX_ROWS.replace("2,0,1.0,0.2,0.3,1", "2,0,1.0,0.2,,0")
        message = "fewer than 2 validation rows in arm 0"
        with pytest.raises(DataError, match=message):
            load_csv(_write(tmp_path, text))

    def test_one_arm_in_validation(self, tmp_path):
        """Test a validation subset with a single arm is rejected."""
        text = SIX_ROWS.replace("2,0,", "2,1,").replace("4,0,", "4,1,")
        with pytest.raises(DataError, match="validation rows in arm 0"):
            load_csv(_write(tmp_path, text))

    def test_u_on_main_rows_ignored(self, tmp_path):
        """Test U values on main-only rows are dropped with a warning."""
        text = SIX_ROWS.replace("5,1,2.5,0.5,,0", "5,1,2.5,0.5,9.0,0")
        with pytest.warns(EstimationWarning, match="ignoring U values"):
            d = load_csv(_write(tmp_path, text))
        assert np.isnan(d.u[4, 0])

    def test_schema_file(self, tmp_path):
        """Test a schema maps custom column names."""
        text = SIX_ROWS.replace("id,a,y,x1,u1,validation", "k,t,out,age,bio,v")
        schema_path = tmp_path / "schema.json"
        schema_path.write_text(
            json.dumps(
                {
                    "id": "k",
                    "treatment": "t",
                    "outcome": "out",
                    "x": ["age"],
                    "u": ["bio"],
                    "validation": "v",
                }
            )
        )
        d = load_csv(
            _write(tmp_path, text), DatasetSchema.from_json(schema_path)
        )
        assert d.x_names == ("age",)
        assert d.u_names == ("bio",)
        assert d.n2 == 4

    def test_infer_orders_numbered_columns(self):
        """Test x10 sorts after x2."""
        schema = DatasetSchema.infer(
            ["id", "a", "y", "x10", "x2", "x1", "u1", "validation"]
        )
        assert schema.x == ("x1", "x2", "x10")
        assert schema.pi is None


class TestRoundTrip:
    """Tests for write_csv / load_csv."""

    def test_bit_exact(self, tmp_path, sim_dataset):
        """Test writing and reloading gives an identical dataset."""
        path = tmp_path / "round.csv"
        write_csv(sim_dataset, path)
        assert load_csv(path).equals(sim_dataset)

    def test_bit_exact_known_inclusion(self, tmp_path, known_dataset):
        """Test round trip keeps inclusion probabilities."""
        path = tmp_path / "round.csv"
        write_csv(known_dataset, path)
        reloaded = load_csv(path)
        assert reloaded.design is Design.KNOWN_INCLUSION
        assert reloaded.equals(known_dataset)

    def test_custom_schema(self, tmp_path):
        """Test a dataset loaded with a schema writes back the same names."""
        text = SIX_ROWS.replace("id,a,y,x1,u1,validation", "k,t,out,age,bio,v")
        schema = DatasetSchema(
            x=("age",),
            u=("bio",),
            id="k",
            treatment="t",
            outcome="out",
            validation="v",
        )
        d = load_csv(_write(tmp_path, text), schema)
        path = tmp_path / "round.csv"
        write_csv(d, path, schema)
        header = path.read_text(encoding="utf-8").splitlines()[0]
        assert header == "k,t,out,age,bio,v"
        assert load_csv(path, schema).equals(d)

    def test_default_keeps_dataset_names(self, tmp_path):
        """Test write_csv without a schema uses the dataset's own names."""
        d = FusedDataset.from_arrays(
            a=[1, 0, 1, 0, 1, 0],
            y=[1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            x=[0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            u=[0.5, 0.6, 0.7, 0.8, np.nan, np.nan],
            in_validation=[True] * 4 + [False] * 2,
            x_names=("age",),
            u_names=("bio",),
        )
        path = tmp_path / "named.csv"
        write_csv(d, path)
        header = path.read_text(encoding="utf-8").splitlines()[0]
        assert header == "id,a,y,age,bio,validation"
        schema = DatasetSchema(x=("age",), u=("bio",))
        assert load_csv(path, schema).equals(d)

    def test_schema_width_mismatch(self, tmp_path, sim_dataset):
        """Test a schema with the wrong number of X columns is rejected."""
        schema = DatasetSchema(x=("x1", "x2", "x3"), u=sim_dataset.u_names)
        with pytest.raises(DataError, match="3 X"):
            write_csv(sim_dataset, tmp_path / "bad.csv", schema)


class TestViews:
    """Tests for validation_view and main_view."""

    def test_validation_view_rows(self, tmp_path):
        """Test the validation view has exactly the flagged rows."""
        d = load_csv(_write(tmp_path, SIX_ROWS))
        view = validation_view(d)
        assert view.n == 4
        assert view.is_validation
        np.testing.assert_array_equal(view.rows, [0, 1, 2, 3])
        assert view.covariates(CovariateSet.XU).shape == (4, 2)

    def test_all_rows_flagged(self):
        """Test S2 = S1 gives a view over the whole dataset."""
        d = FusedDataset.from_arrays(
            a=[1, 0, 1, 0],
            y=[1.0, 2.0, 3.0, 4.0],
            x=[0.1, 0.2, 0.3, 0.4],
            u=[1.0, 1.0, 2.0, 2.0],
            in_validation=[True] * 4,
        )
        view = validation_view(d)
        assert view.n == d.n1
        np.testing.assert_array_equal(view.outcome, d.y)

    def test_no_rows_flagged(self):
        """Test a dataset without validation rows cannot be built."""
        with pytest.raises(DataError):
            FusedDataset.from_arrays(
                a=[1, 0],
                y=[1.0, 2.0],
                x=[0.1, 0.2],
                u=[np.nan, np.nan],
                in_validation=[False, False],
            )

    def test_main_view_hides_u(self, tmp_path):
        """Test U is unreachable through the main view."""
        d = load_csv(_write(tmp_path, SIX_ROWS))
        view = main_view(d)
        assert view.n == 6
        assert view.u is None
        with pytest.raises(DataError, match="not available"):
            view.covariates(CovariateSet.XU)

    def test_count_matches_flags(self, sim_dataset):
        """Test n2 equals the validation view size."""
        assert validation_view(sim_dataset).n == sim_dataset.n2 == 150

    def test_dataset_is_read_only(self, sim_dataset):
        """Test dataset arrays cannot be modified."""
        with pytest.raises(ValueError):
            sim_dataset.y[0] = 0.0


class TestUnitRecord:
    """Tests for UnitRecord and from_units."""

    def test_validation_unit_needs_u(self):
        """Test a validation unit without U is rejected."""
        with pytest.raises(DataError, match="incomplete confounder"):
            UnitRecord("7", 1, 0.0, (1.0,), None, True)

    def test_units_round_trip(self, tmp_path):
        """Test units rebuild the same dataset."""
        d = load_csv(_write(tmp_path, SIX_ROWS))
        assert FusedDataset.from_units(d.units).equals(d)

    def test_pi_with_simple_random_design(self):
        """Test pi without the known-inclusion design is rejected."""
        d = FusedDataset.from_arrays(
            a=[1, 0],
            y=[1.0, 2.0],
            x=[0.1, 0.2],
            u=[1.0, 2.0],
            in_validation=[True, True],
        )
        with pytest.raises(
            DataError, match="require known-inclusion regime"
        ):
            FusedDataset(
                ids=d.ids,
                a=d.a,
                y=d.y,
                x=d.x,
                u=d.u,
                in_validation=d.in_validation,
                pi=np.array([0.5, 0.5]),
            )
