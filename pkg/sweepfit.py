'''
Excitation density model of a pulsed pair source and its fit to sweep data.

Per pulse at density I (nJ/cm2), with fixed singles efficiencies eta_sa, eta_sb:

    C_A = eta_sa (alpha I^2 + beta_a I)          C_B likewise with beta_b
    C_S = eta_x eta_sa eta_sb alpha I^2
    C_R = eta_sa eta_sb (alpha I^2 + beta_a I)(alpha I^2 + beta_b I)
    CAR = C_S / C_R

Singles are linear in (alpha, beta_a, beta_b) and C_S is linear in eta_x,
so both fits are weighted linear least squares.
'''
from collections import namedtuple
import logging
import math

import numpy as np
from prettytable import PrettyTable
from scipy.optimize import brentq, least_squares

from errors import DegeneracyError, FitError, InputError, ParameterError
from file_utils import FileUtils
from source_sim import SourceParams

log = logging.getLogger(__name__)

SWEEP_CSV_FIELDS = ['density_nj_cm2', 'pulses', 'count_a', 'count_b', 'coinc_zero', 'coinc_off_sum', 'off_slots']

JOINT_XTOL = 1e-10
JOINT_MAX_ITERATIONS = 100


class SweepCounts(namedtuple('SweepCounts', ('density', 'pulses', 'count_a', 'count_b', 'coinc_zero',
                                             'coinc_off_sum', 'off_slots'))):
    '''Raw counts of one sweep point, one row of the sweep CSV.'''
    def point(self):
        return SweepPoint.from_counts(self)

    def is_valid(self):
        return self.density >= 0 and self.pulses > 0 and self.off_slots > 0 and min(self[1:]) >= 0

    def as_row(self):
        return [repr(float(self.density)), self.pulses, self.count_a, self.count_b, self.coinc_zero,
                self.coinc_off_sum, self.off_slots]


class SweepPoint(namedtuple('SweepPoint', ('density', 'pulses', 'c_a', 'c_b', 'c_s', 'c_r',
                                             'c_a_err', 'c_b_err', 'c_s_err', 'c_r_err'))):
    # rates per pulse with Poisson errors, floored at one raw count
    @classmethod
    def from_counts(cls, counts):
        pulses = float(counts.pulses)
        c_r = counts.coinc_off_sum / float(counts.off_slots) / pulses
        c_r_err = math.sqrt(max(counts.coinc_off_sum, 1)) / counts.off_slots / pulses
        return cls(
            density=float(counts.density),
            pulses=int(counts.pulses),
            c_a=counts.count_a / pulses,
            c_b=counts.count_b / pulses,
            c_s=counts.coinc_zero / pulses - c_r,
            c_r=c_r,
            c_a_err=math.sqrt(max(counts.count_a, 1)) / pulses,
            c_b_err=math.sqrt(max(counts.count_b, 1)) / pulses,
            c_s_err=math.sqrt(max(counts.coinc_zero, 1) / pulses ** 2 + c_r_err ** 2),
            c_r_err=c_r_err)


def read_sweep_csv(path):
    rows = FileUtils.read_table(path)
    counts = []
    for number, row in enumerate(rows, start=2):
        missing = [f for f in SWEEP_CSV_FIELDS if not row.get(f)]
        if missing:
            raise InputError('%s line %d: missing %s' % (path, number, ', '.join(missing)))
        try:
            density = float(row['density_nj_cm2'])
            values = [int(float(row[f])) for f in SWEEP_CSV_FIELDS[1:]]
        except ValueError as e:
            raise InputError('%s line %d: %s' % (path, number, e))
        sweep_counts = SweepCounts(density, *values)
        if not sweep_counts.is_valid():
            raise InputError('%s line %d: invalid counts %s' % (path, number, sweep_counts))
        counts.append(sweep_counts)
    return counts


def write_sweep_csv(path, counts):
    FileUtils.write_table(path, SWEEP_CSV_FIELDS, [c.as_row() for c in counts], delimiter=',')


SinglesFit = namedtuple('SinglesFit', ('alpha', 'beta_a', 'beta_b', 'covariance', 'clamped', 'chi2_dof'))

EtaXFit = namedtuple('EtaXFit', ('eta_x', 'eta_x_err', 'chi2_dof', 'flags'))

_SINGLES_NAMES = ('alpha', 'beta_a', 'beta_b')


def _check_efficiency(name, value):
    if not 0 < value <= 1:
        raise ParameterError('%s must be in (0, 1], got %s' % (name, value))


def fit_singles(points, eta_sa, eta_sb):
    '''
    Weighted linear least squares of C_A and C_B on the basis {I^2, I}, alpha
    shared by both channels. A parameter with a negative optimum is clamped
    to 0 and the others refit.
    '''
    points = list(points)
    _check_efficiency('eta_sa', eta_sa)
    _check_efficiency('eta_sb', eta_sb)
    if not points:
        raise DegeneracyError('No sweep points')

    density = np.array([p.density for p in points])
    zeros = np.zeros_like(density)
    design = np.vstack([
        np.column_stack([eta_sa * density ** 2, eta_sa * density, zeros]),
        np.column_stack([eta_sb * density ** 2, zeros, eta_sb * density]),
    ])
    measured = np.concatenate([[p.c_a for p in points], [p.c_b for p in points]])
    sigma = np.concatenate([[p.c_a_err for p in points], [p.c_b_err for p in points]])
    if not (sigma > 0).all():
        raise ParameterError('Singles standard errors must be positive')

    design = design / sigma[:, None]
    measured = measured / sigma
    if np.linalg.matrix_rank(design / _column_norms(design)) < len(_SINGLES_NAMES):
        raise DegeneracyError('Singles design is rank deficient (%d distinct densities)' %
                              (len(set(density[density > 0])), ))

    free = list(range(len(_SINGLES_NAMES)))
    clamped = []
    while True:
        solution = _solve(design[:, free], measured)
        if (solution >= 0).all():
            break
        worst = free[int(np.argmin(solution))]
        free.remove(worst)
        clamped.append(_SINGLES_NAMES[worst])
        log.warning('Clamped %s to 0 in the singles fit', _SINGLES_NAMES[worst])
        if not free:
            raise FitError('Negative optimum for every singles parameter')

    parameters = np.zeros(len(_SINGLES_NAMES))
    parameters[free] = solution
    covariance = np.zeros((len(_SINGLES_NAMES), len(_SINGLES_NAMES)))
    norms = _column_norms(design[:, free])
    reduced = design[:, free] / norms
    covariance[np.ix_(free, free)] = np.linalg.inv(reduced.T @ reduced) / np.outer(norms, norms)

    chi2 = float(np.sum((measured - design @ parameters) ** 2))
    dof = len(measured) - len(free)
    return SinglesFit(float(parameters[0]), float(parameters[1]), float(parameters[2]), covariance,
                      tuple(clamped), chi2 / dof if dof > 0 else None)


def _column_norms(matrix):
    norms = np.linalg.norm(matrix, axis=0)
    norms[norms == 0] = 1.0
    return norms


# columns are scaled to unit norm so the factorization does not see the
# orders of magnitude between the I^2 and I columns
def _solve(design, measured):
    norms = _column_norms(design)
    solution = np.linalg.lstsq(design / norms, measured, rcond=None)[0]
    return solution / norms


def fit_eta_x(points, alpha, eta_sa, eta_sb):
    '''
    C_S against x = eta_sa eta_sb alpha I^2, linear in eta_x:
    eta_x = sum(w c_s x) / sum(w x^2), w = 1 / sigma^2
    '''
    if not alpha > 0:
        raise ParameterError('alpha must be positive to fit eta_x, got %s' % (alpha, ))
    used = [p for p in points if p.c_s_err > 0]
    if not used:
        raise ParameterError('No sweep point with a positive C_S error')

    x = np.array([eta_sa * eta_sb * alpha * p.density ** 2 for p in used])
    c_s = np.array([p.c_s for p in used])
    weights = 1.0 / np.array([p.c_s_err for p in used]) ** 2

    sxx = float(np.sum(weights * x ** 2))
    if sxx == 0:
        raise DegeneracyError('All sweep densities are zero')
    eta_x_err = 1.0 / math.sqrt(sxx)

    flags = []
    if not c_s.any():
        log.warning('C_S is zero at every density, eta_x undetermined')
        return EtaXFit(0.0, eta_x_err, None, ('eta_x-undetermined', ))

    eta_x = float(np.sum(weights * c_s * x)) / sxx
    if eta_x < 0:
        log.warning('Negative eta_x optimum %s clamped to 0', eta_x)
        eta_x = 0.0
        flags.append('eta_x-clamped')

    dof = len(used) - 1
    chi2 = float(np.sum(weights * (c_s - eta_x * x) ** 2))
    return EtaXFit(eta_x, eta_x_err, chi2 / dof if dof > 0 else None, tuple(flags))


class FitResult(namedtuple('FitResult', ('alpha', 'alpha_err', 'beta_a', 'beta_a_err', 'beta_b', 'beta_b_err',
                                         'eta_x', 'eta_x_err', 'eta_sa', 'eta_sb', 'chi2_dof_singles',
                                         'chi2_dof_coincidences', 'clamped', 'flags', 'method'))):
    # field name in the JSON form -> attribute; every number carries its unit
    _JSON_FIELDS = [
        ('alpha_pairs_per_pulse_per_nj_cm2_sq', 'alpha'),
        ('alpha_err_pairs_per_pulse_per_nj_cm2_sq', 'alpha_err'),
        ('beta_a_photons_per_pulse_per_nj_cm2', 'beta_a'),
        ('beta_a_err_photons_per_pulse_per_nj_cm2', 'beta_a_err'),
        ('beta_b_photons_per_pulse_per_nj_cm2', 'beta_b'),
        ('beta_b_err_photons_per_pulse_per_nj_cm2', 'beta_b_err'),
        ('eta_x_ratio', 'eta_x'),
        ('eta_x_err_ratio', 'eta_x_err'),
        ('eta_sa_ratio', 'eta_sa'),
        ('eta_sb_ratio', 'eta_sb'),
        ('chi2_per_dof_singles_ratio', 'chi2_dof_singles'),
        ('chi2_per_dof_coincidences_ratio', 'chi2_dof_coincidences'),
    ]

    @property
    def params(self):
        return SourceParams(self.alpha, self.beta_a, self.beta_b, self.eta_sa, self.eta_sb, self.eta_x)

    @property
    def car_max(self):
        if self.beta_a * self.beta_b > 0:
            return self.eta_x * self.alpha / (self.beta_a * self.beta_b)
        return None

    @property
    def car_prime_max(self):
        if self.beta_a * self.beta_b > 0:
            return self.alpha / (self.beta_a * self.beta_b)
        return None

    def to_dict(self):
        data = {key: getattr(self, attribute) for key, attribute in self._JSON_FIELDS}
        data['car_max_ratio'] = self.car_max
        data['car_prime_max_ratio'] = self.car_prime_max
        data['clamped_parameters'] = list(self.clamped)
        data['flags'] = list(self.flags)
        data['fit_method'] = self.method
        return data

    @classmethod
    def from_dict(cls, data):
        try:
            values = {attribute: data[key] for key, attribute in cls._JSON_FIELDS}
            values['clamped'] = tuple(data.get('clamped_parameters', ()))
            values['flags'] = tuple(data.get('flags', ()))
            values['method'] = data.get('fit_method', 'linear')
        except (KeyError, TypeError) as e:
            raise InputError('Not a fit result, missing %s' % (e, ))
        return cls(**values)


def fit_sweep(points, eta_sa, eta_sb, joint=False):
    points = list(points)
    if not points:
        raise FitError('No sweep points')

    singles = fit_singles(points, eta_sa, eta_sb)
    if singles.alpha <= 0:
        raise FitError('No pair signal: alpha clamped to 0')
    coincidences = fit_eta_x(points, singles.alpha, eta_sa, eta_sb)

    errors = np.sqrt(np.diag(singles.covariance))
    result = FitResult(singles.alpha, float(errors[0]), singles.beta_a, float(errors[1]), singles.beta_b,
                       float(errors[2]), coincidences.eta_x, coincidences.eta_x_err, eta_sa, eta_sb,
                       singles.chi2_dof, coincidences.chi2_dof, singles.clamped, coincidences.flags, 'linear')
    log.info('Linear fit over %d points: alpha=%.4g beta_a=%.4g beta_b=%.4g eta_x=%.4g', len(points),
             result.alpha, result.beta_a, result.beta_b, result.eta_x)

    if joint:
        result = joint_refit(points, result)
    return result


def _joint_model(theta, density, eta_sa, eta_sb):
    alpha, beta_a, beta_b, eta_x = theta
    pairs = alpha * density ** 2
    emitted_a = pairs + beta_a * density
    emitted_b = pairs + beta_b * density
    return np.concatenate([eta_sa * emitted_a, eta_sb * emitted_b, eta_x * eta_sa * eta_sb * pairs,
                           eta_sa * eta_sb * emitted_a * emitted_b])


def _joint_jacobian(theta, density, eta_sa, eta_sb):
    alpha, beta_a, beta_b, eta_x = theta
    i2 = density ** 2
    zeros = np.zeros_like(density)
    emitted_a = alpha * i2 + beta_a * density
    emitted_b = alpha * i2 + beta_b * density
    eta = eta_sa * eta_sb
    return np.vstack([
        np.column_stack([eta_sa * i2, eta_sa * density, zeros, zeros]),
        np.column_stack([eta_sb * i2, zeros, eta_sb * density, zeros]),
        np.column_stack([eta_x * eta * i2, zeros, zeros, eta * alpha * i2]),
        np.column_stack([eta * i2 * (emitted_a + emitted_b), eta * density * emitted_b, eta * density * emitted_a,
                         zeros]),
    ])


def joint_refit(points, initial):
    '''
    Damped Gauss-Newton (trust region) refit of (alpha, beta_a, beta_b, eta_x)
    against C_A, C_B, C_S and C_R together, started from the linear fit and
    bounded below by 0.
    '''
    points = list(points)
    density = np.array([p.density for p in points])
    measured = np.array([p.c_a for p in points] + [p.c_b for p in points] +
                        [p.c_s for p in points] + [p.c_r for p in points])
    sigma = np.array([p.c_a_err for p in points] + [p.c_b_err for p in points] +
                     [p.c_s_err for p in points] + [p.c_r_err for p in points])
    used = sigma > 0
    eta_sa, eta_sb = initial.eta_sa, initial.eta_sb

    def residuals(theta):
        return ((_joint_model(theta, density, eta_sa, eta_sb) - measured) / sigma)[used]

    def jacobian(theta):
        return (_joint_jacobian(theta, density, eta_sa, eta_sb) / sigma[:, None])[used]

    start = np.array([initial.alpha, initial.beta_a, initial.beta_b, initial.eta_x], dtype=float)
    scale = np.abs(start).max()
    start = np.maximum(start, 1e-12 * scale)

    solution = least_squares(residuals, start, jac=jacobian, bounds=(0, np.inf), method='trf', x_scale='jac',
                             xtol=JOINT_XTOL, ftol=None, gtol=None, max_nfev=JOINT_MAX_ITERATIONS)
    if solution.status < 0:
        raise FitError('Joint refit failed: %s' % (solution.message, ))
    flags = list(initial.flags)
    if solution.status == 0:
        log.warning('Joint refit stopped after %d iterations', solution.nfev)
        flags.append('joint-max-iterations')

    covariance = np.linalg.pinv(solution.jac.T @ solution.jac)
    errors = np.sqrt(np.diag(covariance))
    n = len(points)
    chi2 = solution.fun ** 2
    singles_rows = int(used[:2 * n].sum())
    coincidence_rows = int(used[2 * n:].sum())
    alpha, beta_a, beta_b, eta_x = (float(v) for v in solution.x)

    return FitResult(alpha, float(errors[0]), beta_a, float(errors[1]), beta_b, float(errors[2]), eta_x,
                     float(errors[3]), eta_sa, eta_sb,
                     _reduced(chi2[:singles_rows].sum(), singles_rows - 3),
                     _reduced(chi2[singles_rows:].sum(), coincidence_rows - 1),
                     initial.clamped, tuple(flags), 'joint')


def _reduced(chi2, dof):
    return float(chi2) / dof if dof > 0 else None


def _scalar_or_array(value):
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


# C_A, C_B per pulse
def predict_singles(density, params):
    density = np.asarray(density, dtype=float)
    pairs = params.alpha * density ** 2
    return (_scalar_or_array(params.eta_sa * (pairs + params.beta_a * density)),
            _scalar_or_array(params.eta_sb * (pairs + params.beta_b * density)))


def predict_cs(density, params):
    density = np.asarray(density, dtype=float)
    return _scalar_or_array(params.eta_x * params.eta_sa * params.eta_sb * params.alpha * density ** 2)


def predict_cr(density, params, eta_sa=None, eta_sb=None):
    eta_sa = params.eta_sa if eta_sa is None else eta_sa
    eta_sb = params.eta_sb if eta_sb is None else eta_sb
    density = np.asarray(density, dtype=float)
    pairs = params.alpha * density ** 2
    return _scalar_or_array(eta_sa * eta_sb * (pairs + params.beta_a * density) * (pairs + params.beta_b * density))


# None (NaN in arrays) where the accidental rate vanishes
def predict_car(density, params):
    density = np.asarray(density, dtype=float)
    pairs = params.alpha * density ** 2
    denominator = (pairs + params.beta_a * density) * (pairs + params.beta_b * density)
    with np.errstate(divide='ignore', invalid='ignore'):
        car = np.where(denominator > 0, params.eta_x * pairs / denominator, np.nan)
    if car.ndim == 0:
        return None if np.isnan(car) else float(car)
    return car


# d log C / d log I of eta (alpha I^2 + beta I): 1 at low density, 2 at high
def singles_log_slope(density, alpha, beta):
    density = np.asarray(density, dtype=float)
    return _scalar_or_array((2 * alpha * density + beta) / (alpha * density + beta))


# 2 at low density, 4 at high
def cr_log_slope(density, params):
    return singles_log_slope(density, params.alpha, params.beta_a) + \
        singles_log_slope(density, params.alpha, params.beta_b)


# density where the singles slope is 1.5
def singles_crossover_density(alpha, beta):
    if alpha > 0 and beta > 0:
        return beta / alpha
    return None


# density where the accidental slope is 3
def cr_crossover_density(params):
    if not (params.alpha > 0 and params.beta_a > 0 and params.beta_b > 0):
        return None

    def excess(log_density):
        return cr_log_slope(math.exp(log_density), params) - 3.0

    lo = math.log(min(params.beta_a, params.beta_b) / params.alpha) - 30
    hi = math.log(max(params.beta_a, params.beta_b) / params.alpha) + 30
    return math.exp(brentq(excess, lo, hi, xtol=1e-14, rtol=1e-14))


PowerLaw = namedtuple('PowerLaw', ('exponent', 'exponent_err', 'prefactor'))


# weighted straight line through log(quantity) vs log(I), eg the C_S exponent
def fit_power_law(points, quantity='c_s'):
    if quantity not in ('c_a', 'c_b', 'c_s', 'c_r'):
        raise ParameterError('Unknown quantity %s' % (quantity, ))
    used = [p for p in points
            if p.density > 0 and getattr(p, quantity) > 0 and getattr(p, quantity + '_err') > 0]
    if len(used) < 2:
        raise DegeneracyError('Need 2 points with positive %s, got %d' % (quantity, len(used)))

    values = np.array([getattr(p, quantity) for p in used])
    log_sigma = np.array([getattr(p, quantity + '_err') for p in used]) / values
    coefficients, covariance = np.polyfit(np.log([p.density for p in used]), np.log(values), 1,
                                          w=1.0 / log_sigma, cov='unscaled')
    return PowerLaw(float(coefficients[0]), float(math.sqrt(covariance[0, 0])), float(math.exp(coefficients[1])))


ReferenceSource = namedtuple('ReferenceSource', ('method', 'car_prime_max', 'alpha'))

# reference chi(3) pair sources: four-photon scattering in dispersion shifted
# fiber, spontaneous four wave mixing in a silicon waveguide
REFERENCE_SOURCES = [
    ReferenceSource('DS-fiber FPS', 6.5e1, 1.6e-10),
    ReferenceSource('Si-WG SFWM', 9.3e1, 2.2e-17),
]

ComparisonRow = namedtuple('ComparisonRow', ('method', 'car_prime_max', 'alpha', 'car_prime_max_ratio',
                                             'alpha_ratio'))

FiguresOfMerit = namedtuple('FiguresOfMerit', ('car_max', 'car_prime_max', 'comparison'))

COMPARISON_FIELDS = ['method', 'car_prime_max_ratio', 'alpha_pairs_per_pulse_per_nj_cm2_sq',
                     'fitted_over_reference_car_prime_max_ratio', 'fitted_over_reference_alpha_ratio']


def figures_of_merit(fit, label='fitted source'):
    car_max = fit.car_max
    car_prime_max = fit.car_prime_max
    if car_prime_max is None:
        log.warning('Zero background efficiency, CAR_max and CAR\'_max undefined')

    comparison = [ComparisonRow(label, car_prime_max, fit.alpha, 1.0 if car_prime_max is not None else None, 1.0)]
    for reference in REFERENCE_SOURCES:
        comparison.append(ComparisonRow(
            reference.method, reference.car_prime_max, reference.alpha,
            car_prime_max / reference.car_prime_max if car_prime_max is not None else None,
            fit.alpha / reference.alpha))
    return FiguresOfMerit(car_max, car_prime_max, comparison)


def comparison_table(figures):
    table = PrettyTable()
    table.field_names = ['method', "CAR'_max", 'alpha', "fitted/ref CAR'_max", 'fitted/ref alpha']
    for row in figures.comparison:
        table.add_row([row.method] + [_format(value) for value in row[1:]])
    return table


def _format(value):
    return '-' if value is None else '%.3g' % (value, )
