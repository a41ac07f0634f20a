'''
Projections from the fitted pulsed model: pair rate under CW excitation and
the pump photon number per generated pair.
'''
from collections import namedtuple
import logging

from scipy import constants

from errors import ParameterError

log = logging.getLogger(__name__)

CM_PER_M = 100.0
NJ_PER_J = 1e9

ASSUMPTIONS = [
    'circular spot, the given size is its diameter',
    'top-hat intensity profile over the spot',
    'pairs per pulse alpha F^2 with fluence F = peak intensity x effective pulse duration, '
    'so a CW intensity I gives alpha x tau_eff x I^2 pairs per second',
]


CwProjectionInput = namedtuple('CwProjectionInput', ('power_w', 'spot_diameter_m', 'photon_energy_ev',
                                                     'pulse_duration_s', 'params'))

CwProjection = namedtuple('CwProjection', ('pair_rate_hz', 'detected_rate_hz', 'intensity_nj_per_s_cm2',
                                           'spot_area_cm2', 'assumptions'))

PhotonsPerPair = namedtuple('PhotonsPerPair', ('photons', 'fluence_nj_cm2', 'pulse_energy_nj', 'spot_area_cm2',
                                               'assumptions'))


def spot_area_cm2(spot_diameter_m):
    if not spot_diameter_m > 0:
        raise ParameterError('Spot diameter must be positive, got %s' % (spot_diameter_m, ))
    return constants.pi * (spot_diameter_m * CM_PER_M / 2) ** 2


def project_cw(projection_input):
    if projection_input.power_w < 0:
        raise ParameterError('Power must be nonnegative, got %s' % (projection_input.power_w, ))
    if not projection_input.pulse_duration_s > 0:
        raise ParameterError('Effective pulse duration must be positive, got %s' %
                             (projection_input.pulse_duration_s, ))
    if not projection_input.photon_energy_ev > 0:
        raise ParameterError('Photon energy must be positive, got %s' % (projection_input.photon_energy_ev, ))

    params = projection_input.params
    area = spot_area_cm2(projection_input.spot_diameter_m)
    intensity = projection_input.power_w * NJ_PER_J / area
    pair_rate = params.alpha * projection_input.pulse_duration_s * intensity ** 2
    detected = pair_rate * params.eta_sa * params.eta_sb

    log.debug('CW projection: %s nJ/s/cm2 -> %s pairs/s, %s Hz detected', intensity, pair_rate, detected)
    return CwProjection(pair_rate, detected, intensity, area, list(ASSUMPTIONS))


# pump photons in the pulse whose fluence yields one pair on average
def photons_per_pair(params, spot_diameter_m, photon_energy_ev):
    if not params.alpha > 0:
        raise ParameterError('Photons per pair undefined for alpha = %s' % (params.alpha, ))
    if not photon_energy_ev > 0:
        raise ParameterError('Photon energy must be positive, got %s' % (photon_energy_ev, ))

    area = spot_area_cm2(spot_diameter_m)
    fluence = params.alpha ** -0.5
    pulse_energy = fluence * area
    photon_energy_nj = photon_energy_ev * constants.eV * NJ_PER_J
    return PhotonsPerPair(pulse_energy / photon_energy_nj, fluence, pulse_energy, area, list(ASSUMPTIONS[:2]))
