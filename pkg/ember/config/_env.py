import copy
import os
from typing import Any, Dict, Mapping, Optional

from attrs import define, field

from ember.config._common import Schema
from ember.exceptions import ScenarioError

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@define
class Env:
    """Override scalar keys of fixed sections from environment variables.

    ``[sim] seed`` is overridden by ``{prefix}SIM_SEED``.
    """

    prefix: str = "EMBER_"
    environ: Optional[Mapping[str, str]] = field(default=None, kw_only=True)

    def __call__(self, config: Mapping[str, Any], schema: Schema) -> Dict[str, Any]:
        environ = os.environ if self.environ is None else self.environ
        out = copy.deepcopy(dict(config))
        for section, keys in schema.sections.items():
            for key, type_ in keys.items():
                if type_ not in (bool, int, float, str):
                    continue
                env_key = f"{self.prefix}{section}_{key}".upper().replace("-", "_")
                try:
                    raw = environ[env_key]
                except KeyError:
                    continue
                out.setdefault(section, {})[key] = _coerce(type_, raw, env_key)
        return out


def _coerce(type_: type, raw: str, env_key: str):
    if type_ is bool:
        lowered = raw.strip().lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ScenarioError(msg=f'{env_key}="{raw}" is not a boolean.')
    try:
        return type_(raw)
    except ValueError:
        raise ScenarioError(msg=f'{env_key}="{raw}" is not a valid {type_.__name__}.') from None
