import pytest

from gatiaa.config import (
    Environment,
    load_env,
    load_run_config,
    parse_config_text,
    parse_overrides
)
from gatiaa.schemas import FeatureMapSidecarSchema
from gatiaa.utils.errors import ConfigError
from marshmallow import ValidationError


@pytest.fixture
def clean_env(monkeypatch):
    for name in ('GATIAA_THREADS', 'GATIAA_LOG_LEVEL', 'GATIAA_DETERMINISTIC'):
        monkeypatch.delenv(name, raising=False)
    return monkeypatch


def test_parse_config_text_skips_comments_and_blanks():
    text = "# run settings\n\nmodel.variant = GAT1_GATP  # inline\ntrain.epochs=3\n"
    assert parse_config_text(text) == {'model.variant': 'GAT1_GATP', 'train.epochs': '3'}


def test_parse_config_text_reports_line():
    with pytest.raises(ConfigError) as excinfo:
        parse_config_text("train.epochs=3\nnot a setting\n", 'run.cfg')
    assert excinfo.value.details['line'] == 2
    assert 'run.cfg:2' in excinfo.value.message
    with pytest.raises(ConfigError):
        parse_config_text("=3")


def test_parse_overrides():
    assert parse_overrides(['train.lr0=0.01', ' model.heads = 2 ']) == {'train.lr0': '0.01', 'model.heads': '2'}
    assert parse_overrides(None) == {}
    with pytest.raises(ConfigError):
        parse_overrides(['train.lr0'])


def test_defaults_without_file():
    config = load_run_config('train')
    assert config.model.variant == 'GAT3_GATP'
    assert config.train.lr0 == 1e-4
    assert config.train.epochs == 30
    assert config.eval.tau == 5.0
    assert config.explicit_keys == frozenset()
    assert config.workers == 1


def test_precedence_file_then_overrides_then_seed(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text("train.epochs=5\ntrain.seed=1\nmodel.heads=2\n")
    config = load_run_config('train', str(path), {'train.epochs': '7'}, seed=9)
    assert config.train.epochs == 7
    assert config.train.seed == 9
    assert config.data.synth_seed == 9
    assert config.model.heads == 2
    assert {'train.epochs', 'train.seed', 'model.heads'} <= config.explicit_keys
    assert config.source == str(path)


def test_effective_lines_are_sorted_and_complete():
    lines = load_run_config('eval', overrides={'synth.grid_w_min': '2'}).effective_lines()
    assert lines == sorted(lines)
    assert 'synth.grid_w_range=2,8' in lines
    assert 'train.augment=true' in lines
    assert 'env.threads=1' in lines


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config('train', str(tmp_path / 'absent.cfg'))


@pytest.mark.parametrize('overrides, key', [
    ({'trian.epochs': '3'}, 'trian.epochs'),
    ({'epochs': '3'}, 'epochs'),
    ({'model.bogus': '1'}, 'model.bogus'),
    ({'train.epochs': 'many'}, 'train.epochs'),
    ({'train.lr0': '0'}, 'train.lr0'),
    ({'train.batch_size': '1'}, 'train.batch_size'),
    ({'model.drop_p': '1.0'}, 'model.drop_p'),
    ({'model.heads': '3'}, 'model.heads'),
    ({'synth.grid_h_min': '5', 'synth.grid_h_max': '2'}, 'synth.grid_h_max')
])
def test_invalid_settings_name_the_key(overrides, key):
    with pytest.raises(ConfigError) as excinfo:
        load_run_config('train', overrides=overrides)
    assert excinfo.value.details['key'] == key


def test_deterministic_forces_single_worker():
    config = load_run_config('train', env=Environment(threads=4), deterministic=True)
    assert config.deterministic
    assert config.workers == 1
    assert load_run_config('train', env=Environment(threads=4)).workers == 4


def test_load_env_reads_variables(clean_env):
    clean_env.setenv('GATIAA_THREADS', '3')
    clean_env.setenv('GATIAA_LOG_LEVEL', 'debug')
    clean_env.setenv('GATIAA_DETERMINISTIC', 'yes')
    env = load_env('/nonexistent/.env')
    assert env == Environment(threads=3, log_level='DEBUG', deterministic=True)


def test_load_env_reads_dotenv_file(clean_env, tmp_path):
    path = tmp_path / '.env'
    path.write_text("GATIAA_THREADS=2\n")
    assert load_env(str(path)).threads == 2


@pytest.mark.parametrize('value', ['zero', '0'])
def test_load_env_rejects_bad_threads(clean_env, value):
    clean_env.setenv('GATIAA_THREADS', value)
    with pytest.raises(ConfigError):
        load_env('/nonexistent/.env')


def test_feature_map_sidecar_schema():
    schema = FeatureMapSidecarSchema()
    assert schema.load({'d': 8, 'w': 4, 'h': 3}) == {'d': 8, 'w': 4, 'h': 3}
    for bad in ({'d': 8, 'w': 4}, {'d': '8', 'w': 4, 'h': 3}, {'d': 8, 'w': 0, 'h': 3},
                {'d': 8, 'w': 4, 'h': 3, 'dtype': 'f4'}):
        with pytest.raises(ValidationError):
            schema.load(bad)
