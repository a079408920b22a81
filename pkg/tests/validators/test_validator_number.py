import pytest
from attrs import define, field

from ember.validators import Number


def test_validator_number_type():
    validator = Number()
    with pytest.raises(TypeError):
        validator(None, None, "this is a string.")  # pyright: ignore[reportArgumentType]
    with pytest.raises(TypeError):
        validator(None, None, True)


def test_validator_number_lt():
    validator = Number(lt=5)
    validator(None, None, 0)

    with pytest.raises(ValueError):
        validator(None, None, 5)

    with pytest.raises(ValueError):
        validator(None, None, 6)


def test_validator_number_lte():
    validator = Number(lte=5)
    validator(None, None, 0)
    validator(None, None, 5)

    with pytest.raises(ValueError):
        validator(None, None, 6)


def test_validator_number_gt():
    validator = Number(gt=5)
    validator(None, None, 10)

    with pytest.raises(ValueError):
        validator(None, None, 5)

    with pytest.raises(ValueError):
        validator(None, None, 4)


def test_validator_number_gte():
    validator = Number(gte=5)
    validator(None, None, 10)
    validator(None, None, 5.0)

    with pytest.raises(ValueError):
        validator(None, None, 4)


def test_validator_number_on_attrs_field():
    @define
    class Config:
        rate: float = field(default=1.0, validator=Number(gt=0, lte=100))

    Config(100)
    with pytest.raises(ValueError) as e:
        Config(0)
    assert str(e.value) == "rate must be > 0"
