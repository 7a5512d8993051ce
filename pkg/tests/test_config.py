import pytest

from sept.benchmark import BenchmarkConfig, config_as_text
from sept.config import RunConfig, mixture_from_text, parse_kv
from sept.errors import ParseError, ValidationError


def test_parse_kv_comments_and_lines():
    kv = parse_kv("# hi\na = 1\n\nb=two # trailing\n")
    assert kv == {"a": ("1", 2), "b": ("two", 4)}


@pytest.mark.parametrize("text, line", [("a=1\nnope\n", 2), ("a=1\na=2\n", 2), ("=3\n", 1)])
def test_parse_kv_errors_name_line(text, line):
    with pytest.raises(ParseError) as exc:
        parse_kv(text, "cfg.txt")
    assert exc.value.line == line
    assert f"cfg.txt:{line}:" in str(exc.value)


def test_mixture_random_means():
    spec, metric = mixture_from_text("dimension=8\ncomponents=3\nstddev=0.1\n", seed=4)
    assert spec.means.shape == (3, 8) and spec.seed == 4 and metric == "cosine"


def test_mixture_explicit_means_and_weights():
    text = "stddev=0.5\nmetric=l2\nweights=0.25,0.75\nmean.0=1,0\nmean.1=0,1\n"
    spec, metric = mixture_from_text(text, seed=0)
    assert spec.means.tolist() == [[1.0, 0.0], [0.0, 1.0]]
    assert spec.weights.tolist() == [0.25, 0.75]
    assert metric == "l2"


@pytest.mark.parametrize(
    "text",
    [
        "dimension=4\n",
        "stddev=0.1\n",
        "dimension=4\nstddev=x\n",
        "dimension=4\nstddev=0.1\ncolour=red\n",
        "stddev=0.1\nmean.0=1,0\nmean.2=0,1\n",
        "stddev=0.1\nmean.0=1,0\nmean.1=0,1,2\n",
        "dimension=2\ncomponents=2\nstddev=0.1\nweights=0.9,0.9\n",
    ],
)
def test_mixture_bad_configs(text):
    with pytest.raises(ParseError):
        mixture_from_text(text, seed=0)


def test_benchmark_config_round_trip():
    cfg = BenchmarkConfig(dimension=16, rerank=False, stddev=0.25)
    assert BenchmarkConfig.from_text(config_as_text(cfg)) == cfg


def test_benchmark_config_unknown_key():
    with pytest.raises(ParseError, match="unknown key"):
        BenchmarkConfig.from_text("budget=10\nbudgett=3\n")


def test_benchmark_config_bad_bool():
    with pytest.raises(ParseError, match="boolean"):
        BenchmarkConfig.from_text("rerank=maybe\n")


def test_preset_fills_missing_fields():
    cfg = RunConfig(preset="paper-default").apply_preset()
    assert (cfg.nlist, cfg.nprobe, cfg.dimension) == (16384, 256, 768)


def test_explicit_values_beat_preset():
    cfg = RunConfig(nlist=64, nprobe=4, preset="paper-default").apply_preset()
    assert (cfg.nlist, cfg.nprobe, cfg.dimension) == (64, 4, 768)


def test_unknown_preset():
    with pytest.raises(ValidationError):
        RunConfig(preset="huge").apply_preset()
