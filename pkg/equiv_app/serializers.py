#Serializers for speq experiment configs and output records
#Handles validation of CLI flags and config files, and shaping of JSON reports

from pathlib import Path

import numpy as np
from rest_framework import serializers
from django.conf import settings

from equiv_app.errors import ConfigError, SpectralParameterError
from equiv_app.resolvents import SpectralParameter
from equiv_app.simulation_service import LIPSCHITZ_MAPS, ColumnKind
from equiv_app.utils import parse_complex, parse_sigma_spec, read_matrix


def config_key(key):
    """'dist.kind' / 'max-iter' in a config file -> 'dist_kind' / 'max_iter'"""
    return str(key).strip().lower().replace('.', '_').replace('-', '_')


class StrictSerializer(serializers.Serializer):
    """Serializer that rejects keys it does not declare"""

    def validate(self, attrs):
        unknown = sorted(set(self.initial_data) - set(self.fields))
        if unknown:
            raise serializers.ValidationError(f"unknown keys: {', '.join(unknown)}")
        return attrs


class GlobalOptionsSerializer(StrictSerializer):
    """Options shared by every subcommand"""
    seed = serializers.IntegerField(min_value=0, max_value=2 ** 64 - 1, required=False)
    output_dir = serializers.CharField(required=False, allow_blank=False)
    threads = serializers.IntegerField(min_value=1, required=False, allow_null=True)
    gnuplot = serializers.BooleanField(default=False)

    def validate(self, attrs):
        attrs = super().validate(attrs)
        attrs.setdefault('seed', settings.SPEQ_SEED)
        attrs.setdefault('output_dir', settings.SPEQ_OUTPUT_DIR)
        return attrs


def _spectral_parameter(value):
    try:
        return SpectralParameter.from_value(parse_complex(value))
    except SpectralParameterError as e:
        raise serializers.ValidationError(str(e))


def _sigma(spec, p):
    try:
        return parse_sigma_spec(spec, p)
    except ConfigError as e:
        raise serializers.ValidationError(str(e))


def _vector(value, name):
    """Comma list of numbers, or a headerless CSV file holding one."""
    if Path(value).is_file():
        try:
            return read_matrix(value).ravel()
        except ConfigError as e:
            raise serializers.ValidationError(str(e))
    try:
        return np.array([float(item) for item in str(value).split(',') if item.strip()])
    except ValueError:
        raise serializers.ValidationError(f"{name} must be a comma-separated list of numbers or a CSV file")


class ModelOptionsSerializer(GlobalOptionsSerializer):
    """Population Sigma (short spec at dimension p) and gamma = p/n"""
    gamma = serializers.FloatField(min_value=0.0)
    sigma = serializers.CharField(default='identity')
    p = serializers.IntegerField(min_value=1, default=100)

    def validate_gamma(self, value):
        if value <= 0:
            raise serializers.ValidationError("gamma must be positive.")
        return value

    def validate(self, attrs):
        attrs = super().validate(attrs)
        attrs['sigma_eigenvalues'] = _sigma(attrs['sigma'], attrs['p'])
        return attrs


class SolveSerializer(ModelOptionsSerializer):
    """One fixed-point solve"""
    z = serializers.CharField()
    tol = serializers.FloatField(required=False, allow_null=True, min_value=0.0)
    max_iter = serializers.IntegerField(required=False, allow_null=True, min_value=1)
    check = serializers.BooleanField(default=False)

    def validate_z(self, value):
        return _spectral_parameter(value)


class FreeconvSerializer(ModelOptionsSerializer):
    """Density and CDF of MP(gamma) boxtimes mu_Sigma"""
    grid = serializers.IntegerField(min_value=64, required=False, allow_null=True)
    eps = serializers.CharField(required=False, allow_blank=True, allow_null=True)
    stieltjes_check = serializers.BooleanField(default=False)

    def validate_eps(self, value):
        if not value:
            return None
        try:
            schedule = [float(item) for item in str(value).split(',') if item.strip()]
        except ValueError:
            raise serializers.ValidationError(f"eps must be a comma-separated list of numbers, got '{value}'")
        if not schedule or any(eps <= 0 for eps in schedule):
            raise serializers.ValidationError("eps values must be positive.")
        if schedule != sorted(set(schedule), reverse=True):
            raise serializers.ValidationError("eps values must be strictly descending.")
        return schedule


class SimulateSerializer(GlobalOptionsSerializer):
    """Replicas of one data-matrix law"""
    p = serializers.IntegerField(min_value=1)
    n = serializers.IntegerField(min_value=1)
    sigma = serializers.CharField(default='identity')
    dist_kind = serializers.ChoiceField(choices=[kind.value for kind in ColumnKind], default='gaussian')
    lipschitz_map = serializers.ChoiceField(choices=list(LIPSCHITZ_MAPS), default='soft_threshold')
    dist_sigma_eigenvalues = serializers.CharField(required=False, allow_blank=True, allow_null=True)
    dist_mean = serializers.CharField(required=False, allow_blank=True, allow_null=True)
    dist_mean_norm = serializers.FloatField(min_value=0.0, default=0.0)
    replicas = serializers.IntegerField(min_value=1, default=1)
    dump_matrix = serializers.BooleanField(default=False)

    def validate_p(self, value):
        if value > settings.SPEQ_MAX_P:
            raise serializers.ValidationError(f"p exceeds SPEQ_MAX_P={settings.SPEQ_MAX_P}.")
        return value

    def validate_n(self, value):
        if value > settings.SPEQ_MAX_N:
            raise serializers.ValidationError(f"n exceeds SPEQ_MAX_N={settings.SPEQ_MAX_N}.")
        return value

    def validate_replicas(self, value):
        if value > settings.SPEQ_MAX_REPLICAS:
            raise serializers.ValidationError(f"replicas exceed SPEQ_MAX_REPLICAS={settings.SPEQ_MAX_REPLICAS}.")
        return value

    def validate(self, attrs):
        attrs = super().validate(attrs)
        # dist.sigma.eigenvalues from a config file wins over --sigma
        explicit = attrs.get('dist_sigma_eigenvalues')
        spec = f"diag:{explicit}" if explicit else attrs['sigma']
        attrs['sigma_eigenvalues'] = _sigma(spec, attrs['p'])
        mean = attrs.pop('dist_mean', None)
        attrs['dist_mean'] = None
        if mean:
            mean = _vector(mean, 'mean')
            if mean.size != attrs['p']:
                raise serializers.ValidationError(f"mean has {mean.size} entries, expected p={attrs['p']}.")
            attrs['dist_mean'] = mean
        return attrs


class SweepOptionsSerializer(GlobalOptionsSerializer):
    """n sweep doubling from nmin up to nmax"""
    gamma = serializers.FloatField(default=0.5)
    nmin = serializers.IntegerField(min_value=2, default=64)
    nmax = serializers.IntegerField(min_value=2, default=512)
    replicas = serializers.IntegerField(min_value=8, default=32)

    def validate(self, attrs):
        attrs = super().validate(attrs)
        if attrs['gamma'] <= 0:
            raise serializers.ValidationError("gamma must be positive.")
        if attrs['nmax'] < attrs['nmin']:
            raise serializers.ValidationError("nmax must be at least nmin.")
        n_values = []
        n = attrs['nmin']
        while n <= attrs['nmax']:
            n_values.append(n)
            n *= 2
        if len(n_values) < 4:
            raise serializers.ValidationError(
                f"the sweep {attrs['nmin']}..{attrs['nmax']} has fewer than 4 doubling steps."
            )
        attrs['n_values'] = tuple(n_values)
        return attrs


class VerifySerializer(SweepOptionsSerializer):
    """Monte Carlo sweep of the deterministic-equivalent bounds"""
    PRESETS = {
        'gaussian-mp': ColumnKind.GAUSSIAN_LINEAR,
        'rademacher-mp': ColumnKind.RADEMACHER_LINEAR,
    }

    preset = serializers.ChoiceField(choices=list(PRESETS), default='gaussian-mp')
    z = serializers.CharField(default='-1')
    sigma = serializers.CharField(default='identity')

    def validate_z(self, value):
        return _spectral_parameter(value)

    def validate(self, attrs):
        attrs = super().validate(attrs)
        attrs['kind'] = self.PRESETS[attrs['preset']]
        return attrs


class KolmogorovSerializer(SweepOptionsSerializer):
    """Kolmogorov-distance rate study, Gaussian against Rademacher columns"""
    nmin = serializers.IntegerField(min_value=2, default=128)
    nmax = serializers.IntegerField(min_value=2, default=1024)
    replicas = serializers.IntegerField(min_value=8, default=8)
    sigma = serializers.CharField(default='identity')
    grid = serializers.IntegerField(min_value=64, required=False, allow_null=True)


class RidgeSerializer(GlobalOptionsSerializer):
    """Effective ridge and the random-features debias experiment"""
    kernel = serializers.CharField(required=False, allow_blank=True, allow_null=True)
    labels = serializers.CharField(required=False, allow_blank=True, allow_null=True)
    test_points = serializers.IntegerField(min_value=0, default=0)
    ridge = serializers.FloatField(default=1.0)
    features = serializers.IntegerField(min_value=1, default=100)
    replicas = serializers.IntegerField(min_value=2, default=400)
    preset = serializers.ChoiceField(choices=['', 'rbf'], default='', allow_blank=True)
    dist_kind = serializers.ChoiceField(choices=['gaussian', 'lipschitz'], default='gaussian')
    n = serializers.IntegerField(min_value=1, default=200)
    n_test = serializers.IntegerField(min_value=1, default=10)

    def validate_ridge(self, value):
        if value <= 0:
            raise serializers.ValidationError("lambda must be positive.")
        return value

    def _existing(self, value, name):
        if value and not Path(value).is_file():
            raise serializers.ValidationError(f"{name} file not found: {value}")
        return value or None

    def validate_kernel(self, value):
        return self._existing(value, 'kernel')

    def validate_labels(self, value):
        return self._existing(value, 'labels')

    def validate(self, attrs):
        attrs = super().validate(attrs)
        if not attrs['preset'] and not attrs.get('kernel'):
            raise serializers.ValidationError("either --preset rbf or --kernel is required.")
        return attrs


class SolutionRecordSerializer(serializers.Serializer):
    """JSON record of one fixed-point solve"""
    z_re = serializers.FloatField()
    z_im = serializers.FloatField()
    branch = serializers.CharField()
    gamma = serializers.FloatField()
    c_re = serializers.FloatField()
    c_im = serializers.FloatField()
    g_nu_re = serializers.FloatField()
    g_nu_im = serializers.FloatField()
    residual = serializers.FloatField()
    iterations = serializers.IntegerField()
    kF = serializers.FloatField()


class RidgePointSerializer(serializers.Serializer):
    index = serializers.IntegerField()
    mean_rf = serializers.FloatField()
    stderr = serializers.FloatField()
    krr_tilde = serializers.FloatField()
    krr_naive = serializers.FloatField()
    gap_tilde = serializers.FloatField()
    gap_naive = serializers.FloatField()


class RidgeReportSerializer(serializers.Serializer):
    """JSON report of the ridge subcommand"""
    # 'lambda' is a keyword, so the field is declared below
    lambda_tilde = serializers.FloatField()
    gap_tilde = serializers.FloatField(required=False)
    gap_naive = serializers.FloatField(required=False)
    kind = serializers.CharField(required=False)
    replicas = serializers.IntegerField(required=False)
    per_x = RidgePointSerializer(many=True, required=False)

    def get_fields(self):
        fields = super().get_fields()
        ordered = {'lambda': serializers.FloatField()}
        ordered.update(fields)
        return ordered
