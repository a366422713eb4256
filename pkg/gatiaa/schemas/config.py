"""
Marshmallow schemas for run configuration sections and feature-map sidecars.

Configuration values arrive as strings from key=value files and `--set`
overrides; the schemas coerce, range-check and turn them into the domain
dataclasses.
"""
from typing import Any, Mapping

from marshmallow import RAISE, Schema, ValidationError, fields, post_load, validate, validates_schema

from gatiaa.config import DataConfig, EvalConfig
from gatiaa.graph.synth import SynthConfig
from gatiaa.models import AGGREGATES, FINAL_ACTIVATIONS, HEAD_COMBINES, HEAD_MODES, VARIANTS, ModelSpec
from gatiaa.services.training import LOSSES, TrainConfig
from gatiaa.utils.errors import ConfigError, GatiaaError

POSITIVE = validate.Range(min=1)


class StrictSchema(Schema):
    class Meta:
        unknown = RAISE


class ModelSpecSchema(StrictSchema):
    """Schema for model.* keys."""

    variant = fields.Str(validate=validate.OneOf(VARIANTS))
    d_in = fields.Int(validate=POSITIVE)
    d_enc = fields.Int(validate=POSITIVE)
    d_att = fields.Int(validate=POSITIVE)
    heads = fields.Int(validate=POSITIVE)
    d_head = fields.Int(validate=POSITIVE)
    gat_layers = fields.Int(validate=validate.OneOf([0, 1, 3]))
    d_dec = fields.Int(validate=POSITIVE)
    bins = fields.Int(validate=POSITIVE)
    drop_p = fields.Float(validate=validate.Range(min=0, max=1, max_inclusive=False))
    final_activation = fields.Str(validate=validate.OneOf(FINAL_ACTIVATIONS))
    head_combine = fields.Str(validate=validate.OneOf(HEAD_COMBINES))
    self_loops = fields.Bool()
    head_mode = fields.Str(validate=validate.OneOf(HEAD_MODES))
    graph_norm_exponent = fields.Float(validate=validate.Range(min=0))
    gcn_aggregate = fields.Str(validate=validate.OneOf(AGGREGATES))
    leaky_slope = fields.Float(validate=validate.Range(min=0, max=1))

    @post_load
    def make_spec(self, data, **kwargs):
        return ModelSpec(**data)


class TrainConfigSchema(StrictSchema):
    """Schema for train.* keys."""

    lr0 = fields.Float(validate=validate.Range(min=0, min_inclusive=False))
    decay_power = fields.Float(validate=validate.Range(min=0))
    epochs = fields.Int(validate=POSITIVE)
    batch_size = fields.Int(validate=validate.Range(min=2))
    beta1 = fields.Float(validate=validate.Range(min=0, max=1, max_inclusive=False))
    beta2 = fields.Float(validate=validate.Range(min=0, max=1, max_inclusive=False))
    epsilon_adam = fields.Float(validate=validate.Range(min=0, min_inclusive=False))
    loss = fields.Str(validate=validate.OneOf(LOSSES))
    seed = fields.Int(validate=validate.Range(min=0))
    checkpoint_dir = fields.Str()
    augment = fields.Bool()
    eval_batch_size = fields.Int(validate=POSITIVE)
    tau = fields.Float()

    @post_load
    def make_config(self, data, **kwargs):
        return TrainConfig(**data)


class SynthConfigSchema(StrictSchema):
    """Schema for synth.* keys."""

    dim = fields.Int(validate=validate.Range(min=2))
    grid_w_min = fields.Int(validate=POSITIVE)
    grid_w_max = fields.Int(validate=POSITIVE)
    grid_h_min = fields.Int(validate=POSITIVE)
    grid_h_max = fields.Int(validate=POSITIVE)
    noise = fields.Float(validate=validate.Range(min=0))
    label_std = fields.Float(validate=validate.Range(min=0, min_inclusive=False))

    @validates_schema
    def validate_ranges(self, data, **kwargs):
        defaults = SynthConfig()
        for axis, (lo_default, hi_default) in (('w', defaults.grid_w_range), ('h', defaults.grid_h_range)):
            lo = data.get(f"grid_{axis}_min", lo_default)
            hi = data.get(f"grid_{axis}_max", hi_default)
            if hi < lo:
                raise ValidationError(f"grid_{axis}_max must be >= grid_{axis}_min", f"grid_{axis}_max")

    @post_load
    def make_config(self, data, **kwargs):
        defaults = SynthConfig()
        return SynthConfig(
            dim=data.get('dim', defaults.dim),
            grid_w_range=(data.get('grid_w_min', defaults.grid_w_range[0]),
                          data.get('grid_w_max', defaults.grid_w_range[1])),
            grid_h_range=(data.get('grid_h_min', defaults.grid_h_range[0]),
                          data.get('grid_h_max', defaults.grid_h_range[1])),
            noise=data.get('noise', defaults.noise),
            label_std=data.get('label_std', defaults.label_std)
        )


class DataConfigSchema(StrictSchema):
    """Schema for data.* keys."""

    manifest = fields.Str()
    train_split = fields.Str(validate=validate.OneOf(['train', 'val', 'test']))
    val_split = fields.Str(validate=validate.OneOf(['train', 'val', 'test']))
    test_split = fields.Str(validate=validate.OneOf(['train', 'val', 'test']))
    synth_count = fields.Int(validate=validate.Range(min=3))
    synth_seed = fields.Int(validate=validate.Range(min=0))

    @post_load
    def make_config(self, data, **kwargs):
        return DataConfig(**data)


class EvalConfigSchema(StrictSchema):
    """Schema for eval.* keys."""

    tau = fields.Float()
    oracle_replay = fields.Bool()
    augmented = fields.Bool()
    confusion = fields.Bool()
    seeds = fields.Int(validate=POSITIVE)

    @post_load
    def make_config(self, data, **kwargs):
        return EvalConfig(**data)


class FeatureMapSidecarSchema(StrictSchema):
    """JSON sidecar `{d, w, h}` of a raw float32 feature map."""

    d = fields.Int(required=True, strict=True, validate=POSITIVE)
    w = fields.Int(required=True, strict=True, validate=POSITIVE)
    h = fields.Int(required=True, strict=True, validate=POSITIVE)


def _first_error(messages, prefix: str):
    if isinstance(messages, dict):
        for key, value in messages.items():
            name = prefix if key == '_schema' else f"{prefix}.{key}"
            return name, _flatten(value)
    return prefix, _flatten(messages)


def _flatten(value) -> str:
    if isinstance(value, dict):
        return '; '.join(f"{k}: {_flatten(v)}" for k, v in value.items())
    if isinstance(value, (list, tuple)):
        return '; '.join(_flatten(v) for v in value)
    return str(value)


def load_section(schema: Schema, values: Mapping[str, Any], section: str):
    """Validate one section; failures become a ConfigError naming the key."""
    try:
        return schema.load(dict(values))
    except ValidationError as e:
        key, message = _first_error(e.messages, section)
        raise ConfigError(f"invalid {key}: {message}", {'key': key, 'errors': e.messages})
    except GatiaaError as e:
        key = f"{section}.{e.details['field']}" if 'field' in e.details else section
        raise ConfigError(f"invalid {key}: {e.message}", {'key': key})


def load_model_spec(values: Mapping[str, Any]) -> ModelSpec:
    return load_section(ModelSpecSchema(), values, 'model')
