"""Flat key=value config parsing and dataclass round-trips."""

import dataclasses

import pytest

from flowlite import configio
from flowlite.models import ModelConfig
from flowlite.scenegen import GeneratorConfig
from flowlite.trainer import TrainConfig


@dataclasses.dataclass(frozen=True)
class Inner:
    alpha: float = 1.5
    n: int = 3


@dataclasses.dataclass(frozen=True)
class Outer:
    name: str = "x"
    flag: bool = True
    inner: Inner = dataclasses.field(default_factory=Inner)


class TestParseFormat:
    def test_basic(self):
        d = configio.parse_kv_text("a = 1\n# comment\nb.c = hello  # trailing\n\n")
        assert d == {"a": "1", "b.c": "hello"}

    def test_bad_line(self):
        with pytest.raises(ValueError):
            configio.parse_kv_text("no equals sign here")

    def test_format_sorted_stable(self):
        assert configio.format_kv({"b": "2", "a": "1"}) == "a = 1\nb = 2\n"


class TestRoundTrip:
    def test_nested(self):
        obj = Outer(name="y", flag=False, inner=Inner(alpha=2.25, n=7))
        flat = configio.to_flat(obj)
        assert flat["inner.alpha"] == "2.25"
        assert flat["flag"] == "false"
        assert configio.from_flat(Outer, flat) == obj

    def test_defaults_preserved(self):
        obj = configio.from_flat(Outer, {"inner.n": "9"})
        assert obj.inner.n == 9
        assert obj.inner.alpha == 1.5 and obj.name == "x"

    def test_unknown_key_rejected(self):
        with pytest.raises(KeyError):
            configio.from_flat(Outer, {"nme": "typo"})

    def test_unknown_nested_key_rejected(self):
        with pytest.raises(KeyError):
            configio.from_flat(Outer, {"inner.alpa": "1.0"})

    def test_bool_parsing(self):
        assert configio.from_flat(Outer, {"flag": "false"}).flag is False
        assert configio.from_flat(Outer, {"flag": "1"}).flag is True
        with pytest.raises(ValueError):
            configio.from_flat(Outer, {"flag": "maybe"})

    @pytest.mark.parametrize("cls", [ModelConfig, GeneratorConfig, TrainConfig])
    def test_real_configs_roundtrip(self, cls):
        obj = cls()
        text = configio.format_kv(configio.to_flat(obj))
        back = configio.from_flat(cls, configio.parse_kv_text(text))
        assert back == obj
