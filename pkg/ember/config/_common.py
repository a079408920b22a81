import errno
import os
import sys
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from attrs import define, field, frozen

from ember.exceptions import UnknownKeyError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


@frozen
class Schema:
    """Allowed keys of a sectioned configuration file.

    Parameters
    ----------
    sections: Mapping[str, Mapping[str, type]]
        Fixed sections, e.g. ``[sim]``, mapping each allowed key to its python type.
    tables: Mapping[str, Mapping[str, type]]
        Sections holding named entries, e.g. ``[robots.ugv1]``. Every entry shares the key set.
    """

    sections: Mapping[str, Mapping[str, type]] = field(factory=dict)
    tables: Mapping[str, Mapping[str, type]] = field(factory=dict)

    def check(self, config: Mapping[str, Any], source: Any = None) -> None:
        """Raise :class:`UnknownKeyError` on the first (sorted) key not covered by the schema."""
        for section in sorted(config):
            body = config[section]
            if section in self.sections:
                _check_keys(body, self.sections[section], section, source)
            elif section in self.tables:
                if not isinstance(body, Mapping):
                    raise UnknownKeyError(key=section, source=source)
                for name in sorted(body):
                    entry = body[name]
                    if not isinstance(entry, Mapping):
                        raise UnknownKeyError(key=f"{section}.{name}", source=source)
                    _check_keys(entry, self.tables[section], f"{section}.{name}", source)
            else:
                raise UnknownKeyError(key=section, source=source)


def _check_keys(body, allowed: Mapping[str, type], prefix: str, source: Any):
    if not isinstance(body, Mapping):
        raise UnknownKeyError(key=prefix, source=source)
    for key in sorted(body):
        if key not in allowed:
            raise UnknownKeyError(key=f"{prefix}.{key}", source=source)


@define
class ConfigFromFile(ABC):
    path: Union[str, Path] = field(converter=Path)
    schema: Optional[Schema] = field(default=None, kw_only=True)
    must_exist: bool = field(default=False, kw_only=True)
    search_parents: bool = field(default=False, kw_only=True)
    allow_unknown: bool = field(default=False, kw_only=True)

    _config: Optional[Dict[str, Any]] = field(default=None, init=False, repr=False)

    @abstractmethod
    def _load_config(self, path: Path) -> Dict[str, Any]:
        """Load the config dictionary from path.

        Parameters
        ----------
        path: Path
            Path to the file. Guaranteed to exist.

        Returns
        -------
        dict
            Loaded configuration.
        """
        raise NotImplementedError

    @property
    def config(self) -> Dict[str, Any]:
        if self._config is not None:
            return self._config

        assert isinstance(self.path, Path)
        for candidate in self._candidates():
            if candidate.exists():
                config = self._load_config(candidate)
                if self.schema is not None and not self.allow_unknown:
                    self.schema.check(config, source=candidate)
                self._config = config
                return self._config
            elif not self.search_parents:
                break

        # No matching file was found.
        if self.must_exist:
            raise FileNotFoundError(errno.ENOENT, os.strerror(errno.ENOENT), str(self.path))

        self._config = {}
        return self._config

    def _candidates(self):
        assert isinstance(self.path, Path)
        yield self.path
        absolute = self.path.absolute()
        for parent in absolute.parent.parents:
            yield parent / self.path.name


class Toml(ConfigFromFile):
    """TOML file, parsed with ``tomllib`` (``tomli`` before Python 3.11)."""

    def _load_config(self, path: Path) -> Dict[str, Any]:
        with path.open("rb") as f:
            return tomllib.load(f)
