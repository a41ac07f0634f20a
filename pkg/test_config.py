import pytest

from config import Config
from test_helpers import fixture_path


def test_config():
    config = Config(fixture_path('config.yml'))

    assert config.get('source', 'alpha') == pytest.approx(2.6e-3)
    assert config.get('correlation', 'checks') == {'guard': 1}
    assert config.get('correlation', 'checks', 'guard') == 1
    assert config.get('correlation', 'checks', 'i_dont_exist') is None
    assert config.get('top_level') == 'value'
    assert config.get('i', 'dont', 'exist') is None

    with pytest.raises(RuntimeError):
        assert config.get('top_level', 'nested')


def test_empty_config():
    config = Config()

    assert config.get('source', 'alpha') is None
    assert config.resolve(None, ('correlation', 'window'), 50) == 50


def test_resolve_order():
    config = Config(fixture_path('config.yml'))

    assert config.resolve(30, ('correlation', 'window'), 50) == 30
    assert config.resolve(None, ('correlation', 'window'), 50) == 20
    assert config.resolve(None, ('correlation', 'guard'), 0) == 0
    assert config.resolve(None, ('simulation', 'seed')) == 11


def test_repository_config_loads():
    config = Config(fixture_path('..', 'config.yml'))

    assert config.get('source', 'eta_x') == pytest.approx(0.203)
    assert config.get('clock', 'period_ps') == 12500
    assert config.get('correlation', 'window') == 50
