import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcdnet.config import ABLATION_ROWS, ConfigValidationError, ExperimentConfig, ablation_config


class TestDefaults:
    def test_full_scale_regime(self):
        c = ExperimentConfig()
        assert (c.num_parts, c.beta, c.gamma, c.alpha, c.P, c.A, c.lambda1, c.lambda2) == (6, 0.25, 0.20, 0.20, 6, 8,
                                                                                          1.0, 1.0)
        assert c.subnet_width == 512 and c.reduction == 16
        assert c.batch_size == 48 and c.feature_height == 12
        assert c.validate() == []

    def test_hard_label_gamma(self):
        assert ExperimentConfig(hard_label=True).effective_gamma == pytest.approx(6 / 12)


class TestValidation:
    def test_errors_are_aggregated(self):
        cfg = ExperimentConfig(gamma=0.9, P=1, beta=0.0, supervision_variant="nope")
        with pytest.raises(ConfigValidationError) as info:
            cfg.check()
        assert len(info.value.errors) == 4
        assert "feasible band" in str(info.value)

    @pytest.mark.parametrize("changes,needle", [
        (dict(input_height=80), "not divisible by num_parts"),
        (dict(downsample=6), "power of two"),
        (dict(backbone_channels=40), "reduction"),
        (dict(use_bcca_loss=True, channel_attention=False), "requires channel_attention"),
        (dict(max_shift=96), "max_shift"),
        (dict(P=40), "exceeds num_train_ids"),
    ])
    def test_single_errors(self, changes, needle):
        errors = ExperimentConfig(**changes).validate()
        assert any(needle in e for e in errors), errors

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigValidationError, match="unknown key 'gama'"):
            ExperimentConfig.from_dict({"gama": 0.2})

    @pytest.mark.parametrize("key,value", [("epochs", "ten"), ("flip", "maybe"), ("P", 2.5), ("gamma", True)])
    def test_bad_types(self, key, value):
        with pytest.raises(ConfigValidationError):
            ExperimentConfig.from_dict({key: value})

    def test_string_coercion(self):
        c = ExperimentConfig.from_dict({"epochs": "3", "flip": "false", "lr": "0.5", "lr_milestones": "2,4"})
        assert (c.epochs, c.flip, c.lr, c.lr_milestones) == (3, False, 0.5, [2, 4])


class TestSerialisation:
    @given(st.integers(0, 1000), st.floats(0.1, 0.5), st.booleans(), st.sampled_from(sorted(ABLATION_ROWS)))
    @settings(max_examples=40, deadline=None)
    def test_round_trip(self, seed, gamma, flip, row):
        c = ablation_config(ExperimentConfig(seed=seed, gamma=gamma, flip=flip), row)
        again = ExperimentConfig.from_json(c.to_json())
        assert again == c
        assert again.content_hash() == c.content_hash()

    def test_hash_changes_with_content(self):
        assert ExperimentConfig().content_hash() != ExperimentConfig(seed=1).content_hash()

    def test_load(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 7, "gamma": 0.3}))
        c = ExperimentConfig.load(path)
        assert c.seed == 7 and c.gamma == 0.3


class TestAblationRows:
    def test_rows_validate(self):
        for row in ABLATION_ROWS:
            assert ablation_config(ExperimentConfig(), row).validate() == [], row

    def test_table_rows(self):
        base = ExperimentConfig()
        b = ablation_config(base, "baseline")
        assert not (b.extra_stripe_subnets or b.channel_attention or b.use_part_reg or b.use_holistic_reg)
        f = ablation_config(base, "full")
        assert f.extra_stripe_subnets and f.use_bcca_loss and f.use_part_reg and f.use_holistic_reg
        assert ablation_config(base, "ca").channel_attention and not ablation_config(base, "ca").use_bcca_loss

    def test_unknown_row(self):
        with pytest.raises(ConfigValidationError):
            ablation_config(ExperimentConfig(), "everything")
