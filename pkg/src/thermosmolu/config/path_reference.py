"""
Custom configparser section/option reference syntax for the run output directory.

The `out` option of the [run] section supports a "section reference" syntax:

    [run]
    ...
    out = runs/eps{{ model_epsilon }}/{{ scheme_scheme }}

<SECTION> matches a configparser section and <OPTION> matches an option in that
section. Every portion of the value delimited with {{ and }} is replaced with the
value of the referenced option. Section names cannot contain underscores, since the
first '_' separates the section from the option.
"""

import re
from configparser import ConfigParser, NoOptionError, NoSectionError

# Pattern to check if a string contains a custom section reference
_REF_PAT = r".*\{\{.+_.+\}\}.*"

# Pattern matching one reference; applied repeatedly until none are left
_REF_COMPONENT_PAT = r"""
    \{\{
    # restrict section names to ignore surrounding whitespace and disallow '_'
    # (since that's our separator)
    \s*
    (?P<section>[^_\s{}](?:[^_{}]*[^_\s{}])?)
    # allow (but ignore) whitespace around the section-option delimiter
    \s*_\s*
    # option names must start and end with a non-whitespace character
    (?P<option>[^\s{}](?:[^{}]*[^\s{}])?)
    \s*
    \}\}
"""

_REF_COMPONENT_RE = re.compile(_REF_COMPONENT_PAT, re.VERBOSE)


def has_config_reference(value: str) -> bool:
    return re.match(_REF_PAT, value) is not None


def eval_config_reference(config: ConfigParser, value: str) -> str:
    if _REF_COMPONENT_RE.search(value) is None:
        raise ValueError(f"Unable to parse config option reference from '{value}'")

    def _substitute(match: re.Match) -> str:
        sect_name, opt_name = match.group("section", "option")
        try:
            return config.get(sect_name, opt_name)
        except (NoSectionError, NoOptionError) as exc:
            raise ValueError(exc.message) from exc

    return _REF_COMPONENT_RE.sub(_substitute, value)
