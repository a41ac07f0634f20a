import contextlib
import csv
import json
import os

from atomicwrites import atomic_write

from errors import InputError


class FileUtils(object):
    # everything we write goes through here: the file only shows up under its
    # final name once it has been fully written
    @staticmethod
    @contextlib.contextmanager
    def atomic_open(path, binary=False):
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        mode = 'wb' if binary else 'w'
        kwargs = {} if binary else {'newline': ''}
        with atomic_write(path, mode=mode, overwrite=True, **kwargs) as f:
            yield f

    @classmethod
    def write_json(cls, path, data):
        with cls.atomic_open(path) as f:
            f.write(cls.dumps(data))

    # sorted keys and fixed indent keep reports byte-stable across runs
    @staticmethod
    def dumps(data):
        return json.dumps(data, sort_keys=True, indent=2) + '\n'

    @staticmethod
    def read_json(path):
        try:
            with open(path) as f:
                return json.load(f)
        except FileNotFoundError:
            raise InputError('No such file: %s' % (path, ))
        except ValueError as e:
            raise InputError('Invalid JSON in %s: %s' % (path, e))

    @classmethod
    def write_table(cls, path, field_names, rows, delimiter='\t'):
        with cls.atomic_open(path) as f:
            writer = csv.writer(f, delimiter=delimiter, lineterminator='\n')
            writer.writerow(field_names)
            for row in rows:
                writer.writerow(row)

    # returns a list of dicts, one per row
    @staticmethod
    def read_table(path, delimiter=','):
        try:
            with open(path, newline='') as f:
                return list(csv.DictReader(f, delimiter=delimiter))
        except FileNotFoundError:
            raise InputError('No such file: %s' % (path, ))
