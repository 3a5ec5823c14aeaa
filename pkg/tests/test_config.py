import pytest

from foml import config as cfgmod
from foml.config import ConfigError, build_config, config_hash, serialize_config


class TestDefaults:
    def test_empty_input_gives_documented_defaults(self):
        cfg = build_config()
        assert cfg.beta1 == 0.01
        assert cfg.beta2 == 0.001
        assert cfg.N == 10
        assert cfg.K == 10
        assert cfg.alpha1 == 0.001 and cfg.alpha2 == 0.001
        assert cfg.learner == "foml"
        assert cfg.optimizer == "adam"
        assert cfg.train_fraction == 0.8
        assert cfg.heldout_fraction == 0.2

    def test_every_field_has_default_and_help(self):
        for spec in cfgmod.FIELDS:
            assert spec.help
            assert spec.default is not None


class TestPrecedence:
    def test_flag_overrides_file(self):
        cfg = build_config("K = 10\n", {"K": "5"})
        assert cfg.K == 5

    def test_file_overrides_default(self):
        cfg = build_config("beta1 = 0.5\n")
        assert cfg.beta1 == 0.5

    def test_sections_and_comments_tolerated(self):
        text = "# comment\n[hyper]\nK = 3\n\n[run]\nseed = 4\n"
        cfg = build_config(text)
        assert cfg.K == 3 and cfg.seed == 4


class TestValidation:
    def test_unknown_key_rejected_by_name(self):
        with pytest.raises(ConfigError, match="unknown config key 'frobnicate'"):
            build_config("frobnicate = 1\n")

    def test_unknown_override_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            build_config("", {"nope": "1"})

    def test_negative_beta1_rejected_with_range_diagnostic(self):
        with pytest.raises(ConfigError, match="beta1.*out of range"):
            build_config("", {"beta1": "-1"})

    def test_type_mismatch_named(self):
        with pytest.raises(ConfigError, match="'K'.*cannot parse"):
            build_config("", {"K": "ten"})

    def test_bad_choice_rejected(self):
        with pytest.raises(ConfigError, match="learner"):
            build_config("", {"learner": "magic"})

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            build_config("K = 1\nK = 2\n")

    def test_boundary_learner_on_boundary_free_stream_rejected(self):
        with pytest.raises(ConfigError, match="requires boundary signals"):
            build_config("", {"learner": "ftml", "boundary_signals": "false"})
        # FOML never needs them
        cfg = build_config("", {"learner": "foml", "boundary_signals": "false"})
        assert cfg.boundary_signals is False

    def test_pair_stream_needs_siamese(self):
        with pytest.raises(ConfigError, match="siamese7"):
            build_config("", {"stream": "pair"})
        cfg = build_config(
            "", {"stream": "pair", "arch": "siamese7", "filters": "8,8,8,16,16,16,32"}
        )
        assert cfg.arch == "siamese7"

    def test_samples_batch_divisibility(self):
        with pytest.raises(ConfigError, match="multiple of N"):
            build_config("", {"samples_per_task": "25", "N": "10"})


class TestSerialization:
    def test_round_trip_preserves_everything(self):
        cfg = build_config("", {"K": "7", "hidden": "32,16", "meta_updates": "false"})
        text = serialize_config(cfg)
        back = build_config(text)
        assert back == cfg

    def test_hash_sensitive_to_semantics_not_outdir(self):
        a = build_config("", {"outdir": "runs/a"})
        b = build_config("", {"outdir": "runs/b"})
        c = build_config("", {"beta1": "0.5"})
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(c)

    def test_serialized_text_is_deterministic(self):
        cfg = build_config("", {"seed": "9"})
        assert serialize_config(cfg) == serialize_config(cfg)
