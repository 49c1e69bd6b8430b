import numpy as np
import pytest

from sorcall.errors import ConfigurationError, DataError
from sorcall.io import (
    Manifest,
    covariate_law,
    read_census,
    read_manifest,
    read_report,
    read_survey,
    write_report,
    write_survey,
)

MANIFEST = """\
outcome: vote
calls: [r1, r2]
missing_covariates: [gender, age3]
observed_covariates: [incvis]
weight: w
family: binary
designs:
  baseline1: [gender, age3, incvis]
  outcome: [gender, "gender:incvis"]
odds_ratio: [gender]
"""

SURVEY = """\
r1,r2,vote,gender,age3,incvis,w
1,1,1,0,1,1,2.0
0,1,0,1,0,0,1.0
0,0,,,,1,1.5
0,1,1,1,1,1,0.5
"""


@pytest.fixture
def files(tmp_path):
    (tmp_path / "m.yaml").write_text(MANIFEST)
    (tmp_path / "s.csv").write_text(SURVEY)
    return tmp_path


def test_manifest(files):
    m = read_manifest(files / "m.yaml")
    assert m.covariates == ("gender", "age3", "incvis")
    wm = m.working_models()
    assert wm.baseline1.names == ("intercept", "gender", "age3", "incvis")
    assert wm.baseline2.names == wm.baseline1.names  # falls back to baseline1
    assert wm.outcome.names == ("intercept", "gender", "gender:incvis")
    assert wm.odds.names == ("y", "y:gender")
    x = np.array([[1.0, 0.0, 1.0]])
    np.testing.assert_array_equal(wm.outcome(x), [[1.0, 1.0, 1.0]])
    spec = m.estimand("logit:gender,age3")
    assert spec.kind == "logistic" and spec.dim == 3


@pytest.mark.parametrize("text, err", [
    (MANIFEST + "colour: red\n", ConfigurationError),
    ("outcome: y\ncalls: [r1, r2]\n", ConfigurationError),
    (MANIFEST.replace("family: binary", "family: poisson"), ConfigurationError),
    (MANIFEST.replace("[gender, age3, incvis]", "[gender, height]"), ConfigurationError),
    ("outcome: [unclosed\n", DataError),
])
def test_manifest_errors(tmp_path, text, err):
    p = tmp_path / "m.yaml"
    p.write_text(text)
    with pytest.raises(err):
        read_manifest(p).working_models()


def test_unknown_estimand(files):
    with pytest.raises(ConfigurationError):
        read_manifest(files / "m.yaml").estimand("median")


def test_read_survey(files):
    m = read_manifest(files / "m.yaml")
    d = read_survey(files / "s.csv", m).data
    assert d.n == 4 and d.K == 2
    np.testing.assert_array_equal(d.y, [1, 0, 1])
    np.testing.assert_array_equal(d.x_missing, [[0, 1], [1, 0], [1, 1]])
    np.testing.assert_array_equal(d.x_observed[:, 0], [1, 0, 1, 1])
    assert d.weight.mean() == pytest.approx(1.0)


@pytest.mark.parametrize("row, line_no, fragment", [
    ("1,0,1,0,1,1,1.0", 6, "decrease"),
    ("0,1,,0,1,1,1.0", 6, "outcome missing"),
    ("0,0,1,,,1,1.0", 6, "outcome present"),
    ("0,1,1,0,1,1,-1", 6, "positive"),
    ("0,1,1,0,1,1", 6, "fields"),
    ("0,1,yes,0,1,1,1", 6, "not a number"),
    ("0,2,1,0,1,1,1", 6, "0 or 1"),
    ("0,1,1,0,,1,1", 6, "age3"),
])
def test_survey_errors_carry_line_numbers(files, row, line_no, fragment):
    p = files / "bad.csv"
    p.write_text(SURVEY + row + "\n")
    with pytest.raises(DataError) as err:
        read_survey(p, read_manifest(files / "m.yaml"))
    assert err.value.line == line_no
    assert f"line {line_no}" in str(err.value)
    assert fragment in str(err.value)


def test_missing_column(files):
    p = files / "bad.csv"
    p.write_text(SURVEY.replace("incvis", "inc"))
    with pytest.raises(DataError, match="missing columns"):
        read_survey(p, read_manifest(files / "m.yaml"))


def test_unsure_respondents(tmp_path):
    (tmp_path / "m.yaml").write_text("outcome: y\ncalls: [r1, r2]\nmissing_covariates: [a]\n"
                                     "unsure_column: unsure\n")
    (tmp_path / "s.csv").write_text("r1,r2,y,a,unsure\n1,1,1,0,0\n0,1,,1,1\n0,0,,,\n")
    sf = read_survey(tmp_path / "s.csv", read_manifest(tmp_path / "m.yaml"))
    np.testing.assert_array_equal(sf.unsure, [False, True])


def test_survey_round_trip(tmp_path, tt_draw):
    m = Manifest(outcome="y", calls=("r1", "r2"), missing_covariates=("xa", "xb"), weight="w")
    write_survey(tmp_path / "s.csv", tt_draw.data, m)
    back = read_survey(tmp_path / "s.csv", m).data
    np.testing.assert_array_equal(back.r, tt_draw.data.r)
    np.testing.assert_array_equal(back.y, tt_draw.data.y)
    np.testing.assert_array_equal(back.x_missing, tt_draw.data.x_missing)


def test_census(census_path):
    d = read_census(census_path)
    assert d.support.shape == (72, 7)
    assert d.mass.sum() == pytest.approx(1.0, abs=1e-12)
    assert d.names[:3] == ("race", "ethnicity", "gender")


def test_census_duplicates_and_errors(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("a,count\n0,1\n1,2\n0,1\n")
    d = read_census(p)
    np.testing.assert_allclose(d.mass, [0.5, 0.5])
    p.write_text("a,n\n0,1\n")
    with pytest.raises(DataError):
        read_census(p)
    p.write_text("a,mass\n0,-1\n")
    with pytest.raises(DataError, match="line 2"):
        read_census(p)


def test_covariate_law_product(files, tmp_path):
    m = read_manifest(files / "m.yaml")
    data = read_survey(files / "s.csv", m).data
    c = tmp_path / "c.csv"
    c.write_text("gender,age3,count\n0,0,1\n0,1,1\n1,0,1\n1,1,1\n")
    law = covariate_law(read_census(c), data, m)
    assert law.names == ("gender", "age3", "incvis")
    # weighted empirical incvis: weights 2, 1, 1.5, 0.5 -> P(incvis = 1) = 4/5
    p1 = law.mass[law.support[:, 2] == 1].sum()
    assert p1 == pytest.approx(0.8)
    bal = covariate_law(read_census(c), data, Manifest(**{**m.__dict__,
                                                          "design_distribution": "balanced"}))
    assert bal.mass[bal.support[:, 2] == 1].sum() == pytest.approx(0.5)


def test_covariate_law_rejects_uncovered(files, tmp_path):
    m = read_manifest(files / "m.yaml")
    c = tmp_path / "c.csv"
    c.write_text("gender,count\n0,1\n1,1\n")
    with pytest.raises(ConfigurationError):
        covariate_law(read_census(c), read_survey(files / "s.csv", m).data, m)


def test_report_round_trip(tmp_path):
    p = tmp_path / "r.json"
    write_report({"a": np.float64(0.1 + 0.2), "b": float("nan"), "c": np.arange(2)}, p)
    r = read_report(p)
    assert r["schema_version"] == 1
    assert r["a"] == 0.1 + 0.2 and r["b"] is None and r["c"] == [0, 1]
    p.write_text('{"schema_version": 99}')
    with pytest.raises(DataError):
        read_report(p)
