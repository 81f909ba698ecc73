import os
import sys
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from artifacts import atomic_path, write_csv, write_json, write_text


def test_csv_float_format(tmp_path):
    path = write_csv(pd.DataFrame({'x': [1 / 3, 2.0]}), tmp_path / 'sub' / 'x.csv')
    assert path.read_text().splitlines() == ['x', '0.333333333', '2']


def test_json_handles_numpy(tmp_path):
    path = write_json({'b': np.float64(0.5), 'a': np.arange(3), 'n': np.int64(4), 'p': Path('q')},
                      tmp_path / 'x.json')
    assert json.loads(path.read_text()) == {'a': [0, 1, 2], 'b': 0.5, 'n': 4, 'p': 'q'}
    assert path.read_text().index('"a"') < path.read_text().index('"b"')


def test_failed_write_leaves_nothing(tmp_path):
    target = tmp_path / 'x.txt'
    with pytest.raises(RuntimeError):
        with atomic_path(target) as tmp:
            tmp.write_text('partial')
            raise RuntimeError('boom')
    assert list(tmp_path.iterdir()) == []
    assert write_text('done', target).read_text() == 'done'
