"""Config parsing and the three-layer precedence, checked for every key."""
from __future__ import annotations

from fractions import Fraction

import pytest

from ablmta.config import (
    CONFIG_KEYS,
    ConfigError,
    DEFAULTS,
    ServerConfig,
    parse_address,
    parse_bool,
    parse_flat,
    parse_float,
    parse_fraction,
    parse_int,
    parse_keywords,
    resolve_server_config,
)
from ablmta.session import PolicyMode


class TestParseFlat:
    def test_basics(self):
        text = """
        # comment
        alpha = 1

        beta= two words
        gamma =
        """
        globals_, sections = parse_flat(text)
        assert globals_ == {"alpha": "1", "beta": "two words", "gamma": ""}
        assert sections == {}

    def test_sections(self):
        text = """
        top = 1
        [first]
        a = 2
        [second]
        a = 3
        """
        globals_, sections = parse_flat(text, allow_sections=True)
        assert globals_ == {"top": "1"}
        assert sections == {"first": {"a": "2"}, "second": {"a": "3"}}

    @pytest.mark.parametrize(
        "text,fragment",
        [
            ("just words\n", "expected key = value"),
            ("= value\n", "empty key"),
            ("a = 1\na = 2\n", "line 2: duplicate key 'a'"),
            ("[sec]\n", "sections are not allowed"),
        ],
    )
    def test_errors(self, text, fragment):
        with pytest.raises(ConfigError, match=fragment):
            parse_flat(text)

    @pytest.mark.parametrize(
        "text,fragment",
        [
            ("[]\n", "empty section name"),
            ("[a]\n[a]\n", "duplicate section"),
            ("[a]\nk=1\nk=2\n", "duplicate key"),
        ],
    )
    def test_section_errors(self, text, fragment):
        with pytest.raises(ConfigError, match=fragment):
            parse_flat(text, allow_sections=True)

    def test_same_key_allowed_in_different_scopes(self):
        globals_, sections = parse_flat("k = 1\n[a]\nk = 2\n", allow_sections=True)
        assert (globals_["k"], sections["a"]["k"]) == ("1", "2")


class TestScalarParsers:
    def test_bool(self):
        for text in ("true", "YES", "1", "On"):
            assert parse_bool(text) is True
        for text in ("false", "no", "0", "OFF"):
            assert parse_bool(text) is False
        with pytest.raises(ConfigError):
            parse_bool("maybe")

    def test_int(self):
        assert parse_int("42") == 42
        assert parse_int("0", minimum=0) == 0
        with pytest.raises(ConfigError):
            parse_int("4.5")
        with pytest.raises(ConfigError):
            parse_int("1", minimum=2)

    def test_float(self):
        assert parse_float("2.5") == 2.5
        with pytest.raises(ConfigError):
            parse_float("nan")
        with pytest.raises(ConfigError):
            parse_float("0.001", minimum=0.01)
        with pytest.raises(ConfigError):
            parse_float("x")

    def test_fraction_is_exact(self):
        assert parse_fraction("1.5") == Fraction(3, 2)
        assert parse_fraction("2") == Fraction(2)
        assert parse_fraction("7/4") == Fraction(7, 4)
        with pytest.raises(ConfigError):
            parse_fraction("fast")
        with pytest.raises(ConfigError):
            parse_fraction("1/0")

    def test_keywords(self):
        assert parse_keywords("") == ()
        assert parse_keywords("win:1.0, free lunch:2.5") == (
            ("win", 1.0),
            ("free lunch", 2.5),
        )
        for bad in ("win", ":1.0", "win:heavy", "win:-1"):
            with pytest.raises(ConfigError):
                parse_keywords(bad)

    def test_address(self):
        assert parse_address("0.0.0.0:0") == ("0.0.0.0", 0)
        assert parse_address("[::1]:25") == ("::1", 25)
        assert parse_address("mail.example:2525") == ("mail.example", 2525)
        for bad in ("nocolon", ":25", "host:", "host:99999", "host:-1"):
            with pytest.raises(ConfigError):
                parse_address(bad)


# For every key: a file value, a flag value, how to read the resolved
# config, and what each layer should parse to.
PRECEDENCE = {
    "listen_address": ("127.0.0.1:1111", "127.0.0.1:2222", lambda c: c.listen_address, "127.0.0.1:1111", "127.0.0.1:2222"),
    "admin_listen_address": ("127.0.0.1:3333", "127.0.0.1:4444", lambda c: c.admin_listen_address, "127.0.0.1:3333", "127.0.0.1:4444"),
    "greeting_domain": ("file.example", "flag.example", lambda c: c.greeting_domain, "file.example", "flag.example"),
    "policy": ("temp_fail_451", "tarpit", lambda c: c.policy.mode, PolicyMode.TEMP_FAIL_451, PolicyMode.TARPIT),
    "tarpit_delay_ms": ("111", "222", lambda c: c.policy.tarpit_delay_ms, 111, 222),
    "ttl_base_s": ("100", "200", lambda c: c.ttl_policy.base_ttl_s, 100, 200),
    "ttl_growth": ("3", "1.5", lambda c: c.ttl_policy.growth, Fraction(3), Fraction(3, 2)),
    "ttl_max_s": ("100000", "200000", lambda c: c.ttl_policy.max_ttl_s, 100000, 200000),
    "classifier_keywords": ("win:1.0", "free:2.5", lambda c: c.classifier_keywords, (("win", 1.0),), (("free", 2.5),)),
    "classifier_threshold": ("5.5", "6.5", lambda c: c.classifier_threshold, 5.5, 6.5),
    "classifier_hook": ("/bin/hook-a", "/bin/hook-b", lambda c: c.classifier_hook, "/bin/hook-a", "/bin/hook-b"),
    "classifier_hook_timeout_ms": ("123", "456", lambda c: c.classifier_hook_timeout_ms, 123, 456),
    "max_message_octets": ("1024", "2048", lambda c: c.max_message_octets, 1024, 2048),
    "command_timeout_s": ("12.5", "25.5", lambda c: c.command_timeout_s, 12.5, 25.5),
    "max_concurrent_sessions": ("5", "6", lambda c: c.max_concurrent_sessions, 5, 6),
    "snapshot_path": ("/tmp/a.abl", "/tmp/b.abl", lambda c: c.snapshot_path, "/tmp/a.abl", "/tmp/b.abl"),
    "snapshot_interval_s": ("1.5", "2.5", lambda c: c.snapshot_interval_s, 1.5, 2.5),
    "abl_enabled": ("false", "true", lambda c: c.abl_enabled, False, True),
    "reject_triggering_message": ("true", "false", lambda c: c.reject_triggering_message, True, False),
    "max_entries": ("10", "20", lambda c: c.max_entries, 10, 20),
}


def test_precedence_table_covers_every_key():
    assert set(PRECEDENCE) == set(CONFIG_KEYS)


@pytest.mark.parametrize("key", sorted(PRECEDENCE))
def test_file_overrides_defaults_and_flags_override_files(key):
    file_value, flag_value, getter, file_parsed, flag_parsed = PRECEDENCE[key]

    defaults_only = resolve_server_config()
    assert getter(defaults_only) == getter(ServerConfig())

    from_file = resolve_server_config(file_text=f"{key} = {file_value}\n")
    assert getter(from_file) == file_parsed

    flag_wins = resolve_server_config(
        file_text=f"{key} = {file_value}\n", overrides={key: flag_value}
    )
    assert getter(flag_wins) == flag_parsed

    flag_without_file = resolve_server_config(overrides={key: flag_value})
    assert getter(flag_without_file) == flag_parsed


def test_defaults_resolve_to_the_dataclass_defaults():
    resolved = resolve_server_config()
    assert resolved == ServerConfig()
    assert set(DEFAULTS) == set(CONFIG_KEYS)


class TestResolveErrors:
    def test_unknown_keys_are_named(self):
        with pytest.raises(ConfigError, match="unknown config file key.*listen_adress"):
            resolve_server_config(file_text="listen_adress = 127.0.0.1:1\n")
        with pytest.raises(ConfigError, match="unknown flag key.*turbo"):
            resolve_server_config(overrides={"turbo": "yes"})

    def test_sections_rejected_in_server_config(self):
        with pytest.raises(ConfigError, match="sections are not allowed"):
            resolve_server_config(file_text="[sender.x]\nkind = spammer\n")

    @pytest.mark.parametrize(
        "key,value,fragment",
        [
            ("ttl_base_s", "0", "TTL"),
            ("ttl_max_s", "10", "TTL"),  # below default base
            ("ttl_growth", "0.5", "TTL"),
            ("policy", "slowroll", "unknown policy"),
            ("listen_address", "nocolon", "host:port"),
            ("max_concurrent_sessions", "0", ">= 1"),
            ("command_timeout_s", "0", ">= 0.01"),
            ("abl_enabled", "perhaps", "boolean"),
            ("classifier_keywords", "win", "word:weight"),
            ("max_message_octets", "-5", ">= 1"),
        ],
    )
    def test_bad_values(self, key, value, fragment):
        with pytest.raises(ConfigError, match=fragment):
            resolve_server_config(overrides={key: value})


def test_host_port_properties():
    config = ServerConfig(listen_address="0.0.0.0:2525", admin_listen_address="[::1]:9")
    assert config.listen_host_port == ("0.0.0.0", 2525)
    assert config.admin_host_port == ("::1", 9)
