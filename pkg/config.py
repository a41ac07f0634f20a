import yaml


class Config(object):
    DEFAULT_FILE = 'config.yml'

    # file=None gives an empty config, every lookup then returns None
    def __init__(self, file=None):
        self._data = {}
        if file is not None:
            with open(file) as f:
                self._data = yaml.load(f, Loader=yaml.FullLoader) or {}

    def get(self, *path):
        current = self._data
        for item in path:
            if not isinstance(current, dict):
                raise RuntimeError('Invalid config path %s' % (path, ))
            current = current.get(item)
            if current is None:
                return None
        return current

    # first non-None of: explicit value (eg a command line flag), config
    # value at path, default
    def resolve(self, explicit, path, default=None):
        if explicit is not None:
            return explicit
        value = self.get(*path)
        if value is not None:
            return value
        return default
