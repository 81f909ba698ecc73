import os
import sys
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import json

import numpy as np
import pandas as pd
import pytest

from cli import SUBCOMMANDS, RunConfig, build_parser, exit_code_for, main, parse_axis
from errors import CalibrationError, ConfigError, DataError, DomainError
from fiber_model import fringe_window, load_fiber_profile, synthesize_fringes
from jointspectrum import BandwidthKind, bandwidth_convert
from phasematch import PumpSpec, solve_contour
from setdata import simulate_set_scan, write_set_scan


def _last_json(text):
    return json.loads(text.strip().splitlines()[-1])


def test_env_defaults(monkeypatch):
    monkeypatch.setenv('XFWM_OUT_DIR', 'tmp/out')
    monkeypatch.setenv('XFWM_GRID', '64')
    monkeypatch.setenv('XFWM_BANDWIDTH_NM', '3.5')
    monkeypatch.setenv('XFWM_NO_PLOTS', 'true')

    args = build_parser().parse_args(['jsa'])

    assert args.out_dir == 'tmp/out'
    assert args.grid == 64
    assert args.bandwidth == 3.5
    assert args.no_plots


def test_cli_overrides_env(monkeypatch):
    monkeypatch.setenv('XFWM_GRID', '64')
    monkeypatch.setenv('XFWM_OUT_DIR', 'tmp/out')

    args = build_parser().parse_args(['jsa', '--grid', '32', '--out-dir', 'o', '--log-level', 'debug'])

    assert args.grid == 32
    assert args.out_dir == 'o'
    assert args.log_level == 'DEBUG'


def test_bad_env_value_is_a_config_error(monkeypatch):
    monkeypatch.setenv('XFWM_GRID', 'many')
    with pytest.raises(ConfigError):
        build_parser()


def test_parse_axis():
    np.testing.assert_allclose(parse_axis('1:2:0.5', '--x'), [1.0, 1.5, 2.0])
    np.testing.assert_allclose(parse_axis('3, 1,2', '--x'), [3.0, 1.0, 2.0])
    for text in ('', '2:1:1', '1:2:0', 'a,b'):
        with pytest.raises(ConfigError) as err:
            parse_axis(text, '--x')
        assert err.value.flag == '--x'


def test_run_config_options():
    args = build_parser().parse_args(['contours', '--pump-range', '1000,1010', '--out-dir', 'o'])
    config = RunConfig.from_namespace(args)
    assert config.subcommand == 'contours'
    assert config.options['pump_range'] == '1000,1010'
    assert 'out_dir' not in config.options
    with pytest.raises(ConfigError):
        RunConfig('contours', 'pm980xp', config.out_dir, n_jobs=0)


def test_exit_codes():
    assert exit_code_for(ConfigError('x')) == 2
    assert exit_code_for(DomainError('x')) == 3
    assert exit_code_for(CalibrationError('x', [1300.0])) == 3
    assert exit_code_for(DataError('x')) == 3
    assert exit_code_for(FileNotFoundError('x')) == 4
    assert exit_code_for(RuntimeError('x')) == 1


def test_help_lists_every_subcommand(capsys, monkeypatch):
    monkeypatch.setenv('COLUMNS', '100')
    assert main(['--help']) == 0
    out = capsys.readouterr().out
    for name in SUBCOMMANDS:
        assert name in out


GOLDEN_DIR = os.path.join(os.path.dirname(__file__), 'golden')


@pytest.mark.parametrize('name', ('xfwm',) + SUBCOMMANDS)
def test_help_matches_golden_file(name, capsys, monkeypatch):
    monkeypatch.setenv('COLUMNS', '40')
    argv = ['--help'] if name == 'xfwm' else [name, '--help']
    assert main(argv) == 0
    with open(os.path.join(GOLDEN_DIR, f'help_{name}.txt'), encoding='utf-8', newline='') as fh:
        expected = fh.read()
    assert capsys.readouterr().out == expected


def test_contours_end_to_end(tmp_path, capsys):
    code = main(['contours', '--pump-range', '1000:1020:10', '--out-dir', str(tmp_path), '--no-plots'])
    assert code == 0
    assert 'contours: 3 points' in capsys.readouterr().out
    frame = pd.read_csv(tmp_path / 'contours.csv')
    assert list(frame['pump_nm']) == pytest.approx([1000.0, 1010.0, 1020.0])
    assert frame['signal_nm'].between(780, 860).all()


def test_jsa_end_to_end(tmp_path, capsys):
    code = main(['jsa', '--grid', '48', '--length-cm', '9', '--out-dir', str(tmp_path), '--no-plots'])
    assert code == 0
    assert capsys.readouterr().out.startswith('jsa: purity=')
    summary = json.loads((tmp_path / 'jsa_summary.json').read_text())
    assert 0 < summary['purity'] <= 1
    assert summary['schmidt_number'] >= 1
    assert 0 < summary['contour_angle_deg'] < 90
    assert (tmp_path / 'jsa.csv').exists() and (tmp_path / 'jsa.json').exists()


def test_purity_sweep_end_to_end(tmp_path):
    code = main(['purity-sweep', '--sweep-lengths', '1,4', '--sweep-bandwidths', '2,8', '--grid', '32',
                 '--out-dir', str(tmp_path), '--no-plots'])
    assert code == 0
    frame = pd.read_csv(tmp_path / 'purity_sweep.csv', index_col=0)
    assert frame.shape == (2, 2)
    assert ((frame > 0) & (frame <= 1)).all().all()


def test_purity_sweep_flags_clipped_cells(tmp_path, capsys):
    code = main(['purity-sweep', '--sweep-lengths', '0.5,9', '--sweep-bandwidths', '2', '--grid', '32',
                 '--out-dir', str(tmp_path), '--no-plots'])
    assert code == 0
    assert '1 on clipped grids' in capsys.readouterr().out
    cells = pd.read_csv(tmp_path / 'purity_sweep_cells.csv')
    assert list(cells.columns) == ['length_cm', 'bandwidth_nm', 'purity', 'clipped']
    assert cells.set_index('length_cm')['clipped'].to_dict() == {0.5: True, 9.0: False}


def test_empty_sweep_is_a_config_error(tmp_path, capsys):
    code = main(['purity-sweep', '--sweep-lengths', '', '--out-dir', str(tmp_path)])
    assert code == 2
    err = _last_json(capsys.readouterr().err)
    assert err['status'] == 'error'
    assert err['exit_code'] == 2
    assert err['flag'] == '--sweep-lengths'


def test_unknown_option_is_a_config_error(tmp_path, capsys):
    assert main(['jsa', '--no-such-flag']) == 2
    assert _last_json(capsys.readouterr().err)['kind'] == 'config'


def test_stats_end_to_end_is_reproducible(tmp_path):
    argv = ['stats', '--k-modes', '2', '--mu', '0.01,0.05', '--pulses', '2e4', '--partitions', '2',
            '--seed', '9', '--no-plots']
    assert main(argv + ['--out-dir', str(tmp_path / 'a')]) == 0
    assert main(argv + ['--out-dir', str(tmp_path / 'b')]) == 0
    a = (tmp_path / 'a' / 'stats.csv').read_bytes()
    assert a == (tmp_path / 'b' / 'stats.csv').read_bytes()
    table = pd.read_csv(tmp_path / 'a' / 'stats.csv')
    assert list(table['mu']) == pytest.approx([0.01, 0.05])


def test_stats_power_sweep(tmp_path):
    code = main(['stats', '--power-mw', '10,70', '--pulses', '2e4', '--partitions', '2',
                 '--out-dir', str(tmp_path), '--no-plots'])
    assert code == 0
    table = pd.read_csv(tmp_path / 'stats.csv')
    assert table.columns[0] == 'power_mw'


def test_fringes_end_to_end(tmp_path):
    dn = 3.571e-4
    lam = fringe_window(dn, 1.0, 1.0e-6, periods=10)
    trace = synthesize_fringes(dn, 1.0, lam)
    pd.DataFrame({'wavelength_nm': lam * 1e9, 'intensity': trace.intensities}).to_csv(
        tmp_path / 'trace.csv', index=False)
    code = main(['fringes', '--trace', str(tmp_path / 'trace.csv'), '--length-cm', '100',
                 '--out-dir', str(tmp_path / 'out')])
    assert code == 0
    result = json.loads((tmp_path / 'out' / 'fringes.json').read_text())
    assert result['dn'] == pytest.approx(dn, rel=0.01)


@pytest.fixture
def scan_dirs(tmp_path):
    fiber = load_fiber_profile('pm980xp').with_length(0.15)
    point = solve_contour(fiber, [1000e-9])[0]
    s0, i0 = round(point.signal_wavelength * 1e9, 1), round(point.idler_wavelength * 1e9)
    pump = PumpSpec(1000e-9, bandwidth_convert(2.0, BandwidthKind.SIGMA_FIELD_NM, 1000e-9))
    signal_axis = s0 + np.arange(-100, 101) * 0.04
    setpoints = i0 + np.arange(-24, 25) * 0.5
    dirs = []
    for k, drift in enumerate([0.0, 0.1]):
        scan = simulate_set_scan(fiber, pump, setpoints, signal_axis, drift_nm=drift, fiber_id=f'fiber{k}')
        write_set_scan(scan, tmp_path / f'fiber{k}')
        dirs.append(tmp_path / f'fiber{k}')
    return dirs


def test_set_calibrate_end_to_end(tmp_path, scan_dirs, capsys):
    code = main(['set-calibrate', '--scan', str(scan_dirs[0]), '--out-dir', str(tmp_path / 'out'), '--no-plots'])
    assert code == 0
    assert 'features=1' in capsys.readouterr().out
    summary = json.loads((tmp_path / 'out' / 'fiber0_summary.json').read_text())
    assert summary['rows'] == 49
    assert not summary['inhomogeneous']
    assert 0 < summary['purity_upper_bound'] <= 1


def test_overlap_end_to_end(tmp_path, scan_dirs):
    code = main(['overlap', '--scans', *map(str, scan_dirs), '--out-dir', str(tmp_path / 'out'), '--no-plots'])
    assert code == 0
    report = json.loads((tmp_path / 'out' / 'overlap.json').read_text())
    assert report['labels'] == ['fiber0', 'fiber1']
    assert report['features'] == [1, 1]
    assert report['overlaps']['pairwise'][0][1] > 0.99
    assert 'phase-blind' in report['overlaps']['note']


def test_missing_scan_is_an_io_error(tmp_path, capsys):
    code = main(['overlap', '--scans', str(tmp_path / 'nope'), '--out-dir', str(tmp_path / 'out')])
    assert code == 4
    assert _last_json(capsys.readouterr().err)['kind'] == 'io'


def test_config_file_overrides_environment(tmp_path, monkeypatch):
    monkeypatch.setenv('XFWM_PUMP_RANGE', '1000:1100:1')
    config = tmp_path / 'run.env'
    config.write_text('XFWM_PUMP_RANGE=1050\n', encoding='utf-8')
    assert main(['contours', '--config', str(config), '--out-dir', str(tmp_path), '--no-plots']) == 0
    assert len(pd.read_csv(tmp_path / 'contours.csv')) == 1
    assert main(['contours', '--config', str(tmp_path / 'missing.env'), '--out-dir', str(tmp_path)]) == 2


def test_main_reads_sys_argv(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr('sys.argv', ['cli.py', 'contours', '--pump-range', '1040', '--out-dir', str(tmp_path),
                                     '--no-plots'])
    assert main() == 0
    assert 'contours: 1 points' in capsys.readouterr().out
