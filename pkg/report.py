'''
Report assembly: fit result, figures of merit, crossovers and projections in
one JSON document, plus plot-ready TSVs of the density dependences (measured
points and model curves), rates in Hz.
'''
import logging
import math
import os

import numpy as np

from errors import DegeneracyError, PairSourceError
from file_utils import FileUtils
from projections import photons_per_pair, project_cw
from sweepfit import (COMPARISON_FIELDS, cr_crossover_density, figures_of_merit, fit_power_law, predict_car,
                      predict_cr, predict_cs, predict_singles, singles_crossover_density)

log = logging.getLogger(__name__)

MODEL_GRID_POINTS = 200
DEFAULT_DENSITY_SPAN = (0.05, 16.0)

# top level keys of the report and the keys of each section
REPORT_FIELDS = {
    'fit': None,
    'figures_of_merit': ['car_max_ratio', 'car_prime_max_ratio', 'comparison'],
    'crossovers': ['singles_a_crossover_nj_cm2', 'singles_b_crossover_nj_cm2', 'cr_crossover_nj_cm2'],
    'cs_power_law': ['exponent_ratio', 'exponent_err_ratio', 'points_count'],
    'cw_projection': ['power_w', 'spot_diameter_m', 'photon_energy_ev', 'pulse_duration_s', 'spot_area_cm2',
                      'intensity_nj_per_s_cm2', 'pair_rate_hz', 'detected_rate_hz', 'assumptions'],
    'photons_per_pair': ['photons_count', 'fluence_nj_cm2', 'pulse_energy_nj', 'spot_area_cm2', 'assumptions'],
    'clock': ['period_ps', 'repetition_rate_hz'],
}

FIG_SINGLES_FIELDS = ['kind', 'density_nj_cm2', 'c_a_hz', 'c_a_err_hz', 'c_b_hz', 'c_b_err_hz',
                      'c_a_pairs_hz', 'c_a_background_hz', 'c_b_pairs_hz', 'c_b_background_hz']
FIG_COINCIDENCE_FIELDS = ['kind', 'density_nj_cm2', 'c_s_hz', 'c_s_err_hz', 'c_r_hz', 'c_r_err_hz', 'car_ratio',
                          'car_err_ratio']


def build_report(fit, points, projection_input, clock):
    points = list(points)
    figures = figures_of_merit(fit)
    params = fit.params
    cw = project_cw(projection_input._replace(params=params))

    report = {
        'fit': fit.to_dict(),
        'figures_of_merit': {
            'car_max_ratio': figures.car_max,
            'car_prime_max_ratio': figures.car_prime_max,
            'comparison': [dict(zip(COMPARISON_FIELDS, row)) for row in figures.comparison],
        },
        'crossovers': {
            'singles_a_crossover_nj_cm2': singles_crossover_density(fit.alpha, fit.beta_a),
            'singles_b_crossover_nj_cm2': singles_crossover_density(fit.alpha, fit.beta_b),
            'cr_crossover_nj_cm2': cr_crossover_density(params),
        },
        'cs_power_law': _cs_power_law(points),
        'cw_projection': {
            'power_w': projection_input.power_w,
            'spot_diameter_m': projection_input.spot_diameter_m,
            'photon_energy_ev': projection_input.photon_energy_ev,
            'pulse_duration_s': projection_input.pulse_duration_s,
            'spot_area_cm2': cw.spot_area_cm2,
            'intensity_nj_per_s_cm2': cw.intensity_nj_per_s_cm2,
            'pair_rate_hz': cw.pair_rate_hz,
            'detected_rate_hz': cw.detected_rate_hz,
            'assumptions': cw.assumptions,
        },
        'photons_per_pair': _photons_per_pair(params, projection_input),
        'clock': {
            'period_ps': clock.period,
            'repetition_rate_hz': clock.repetition_rate_hz,
        },
    }
    return report


def _cs_power_law(points):
    if not points:
        return None
    try:
        power_law = fit_power_law(points, 'c_s')
    except DegeneracyError as e:
        log.warning('No C_S power law: %s', e)
        return None
    return {'exponent_ratio': power_law.exponent, 'exponent_err_ratio': power_law.exponent_err,
            'points_count': len(points)}


def _photons_per_pair(params, projection_input):
    try:
        result = photons_per_pair(params, projection_input.spot_diameter_m, projection_input.photon_energy_ev)
    except PairSourceError as e:
        log.warning('No photons per pair: %s', e)
        return None
    return {'photons_count': result.photons, 'fluence_nj_cm2': result.fluence_nj_cm2,
            'pulse_energy_nj': result.pulse_energy_nj, 'spot_area_cm2': result.spot_area_cm2,
            'assumptions': result.assumptions}


# list of problems, empty when the report has exactly the REPORT_FIELDS keys
def validate_report(report):
    problems = []
    for key in sorted(set(report) ^ set(REPORT_FIELDS)):
        problems.append('unexpected key %s' % (key, ) if key in report else 'missing key %s' % (key, ))
    for key, fields in sorted(REPORT_FIELDS.items()):
        section = report.get(key)
        if fields is None or section is None:
            continue
        for field in sorted(set(section) ^ set(fields)):
            problems.append('%s: %s %s' % (key, 'unexpected' if field in section else 'missing', field))
    return problems


def model_grid(points):
    densities = [p.density for p in points if p.density > 0]
    low, high = (min(densities) / 2, max(densities) * 2) if densities else DEFAULT_DENSITY_SPAN
    return np.geomspace(low, high, MODEL_GRID_POINTS)


def singles_rows(fit, points, clock):
    hz = clock.repetition_rate_hz
    rows = [['measured', p.density, p.c_a * hz, p.c_a_err * hz, p.c_b * hz, p.c_b_err * hz, None, None, None, None]
            for p in points]

    params = fit.params
    grid = model_grid(points)
    c_a, c_b = predict_singles(grid, params)
    pairs = params.alpha * grid ** 2
    for i, density in enumerate(grid):
        rows.append(['model', float(density), c_a[i] * hz, None, c_b[i] * hz, None,
                     params.eta_sa * pairs[i] * hz, params.eta_sa * params.beta_a * density * hz,
                     params.eta_sb * pairs[i] * hz, params.eta_sb * params.beta_b * density * hz])
    return rows


def coincidence_rows(fit, points, clock):
    hz = clock.repetition_rate_hz
    rows = []
    for p in points:
        car = car_err = None
        if p.c_r > 0:
            car = p.c_s / p.c_r
            car_err = math.hypot(p.c_s_err / p.c_r, p.c_s * p.c_r_err / p.c_r ** 2)
        rows.append(['measured', p.density, p.c_s * hz, p.c_s_err * hz, p.c_r * hz, p.c_r_err * hz, car, car_err])

    params = fit.params
    grid = model_grid(points)
    c_s = predict_cs(grid, params)
    c_r = predict_cr(grid, params)
    car = predict_car(grid, params)
    for i, density in enumerate(grid):
        rows.append(['model', float(density), c_s[i] * hz, None, c_r[i] * hz, None,
                     None if np.isnan(car[i]) else float(car[i]), None])
    return rows


def write_report(out_dir, fit, points, projection_input, clock):
    points = list(points)
    report = build_report(fit, points, projection_input, clock)
    problems = validate_report(report)
    if problems:
        raise PairSourceError('Report does not match its field list: %s' % ('; '.join(problems), ))

    figures = figures_of_merit(fit)
    FileUtils.write_table(os.path.join(out_dir, 'fig_singles.tsv'), FIG_SINGLES_FIELDS,
                          _plain(singles_rows(fit, points, clock)))
    FileUtils.write_table(os.path.join(out_dir, 'fig_coincidences.tsv'), FIG_COINCIDENCE_FIELDS,
                          _plain(coincidence_rows(fit, points, clock)))
    FileUtils.write_table(os.path.join(out_dir, 'comparison.tsv'), COMPARISON_FIELDS, figures.comparison)
    FileUtils.write_json(os.path.join(out_dir, 'report.json'), report)
    log.info('Wrote report to %s', out_dir)
    return report, figures


# numpy scalars to python floats so the TSV text is the repr of the value
def _plain(rows):
    return [[float(v) if isinstance(v, np.floating) else v for v in row] for row in rows]
