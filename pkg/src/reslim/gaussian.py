"""Centred Gaussian fields on finite sets, their intrinsic metric and modulus bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.stats import wasserstein_distance

from .entropy import EntropyProfile, entropy_profile
from .gh import PSD_CLIP, check_covariance, hcov_distance, hpr_distance
from .metric_core import Correspondence, FiniteMetricSpace
from .process import chaining_rhs, close_pairs, local_time_moduli
from .resistance import ResistanceNetwork, gaussian_distance_matrix, potential_density
from .streams import as_generator, stream


@dataclass(frozen=True, eq=False)
class GaussianSpec:
    """Covariance matrix with the metric d_G it induces and a root point."""

    cov: np.ndarray
    provenance: str = "explicit"
    root: int = 0
    space: FiniteMetricSpace = field(init=False)

    def __post_init__(self):
        cov = check_covariance(self.cov)
        cov.setflags(write=False)
        object.__setattr__(self, "cov", cov)
        d = gaussian_distance_matrix(cov)
        object.__setattr__(self, "space", FiniteMetricSpace(d, trusted=True))
        if not 0 <= self.root < cov.shape[0]:
            raise ValueError("root index out of range")

    @property
    def n(self) -> int:
        return self.cov.shape[0]

    @cached_property
    def factor(self) -> np.ndarray:
        """Symmetric square root of the covariance, negative eigenvalues clipped at 0."""
        vals, vecs = np.linalg.eigh(self.cov)
        if vals.min() < -PSD_CLIP:
            raise ValueError("covariance is not positive semidefinite")
        return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def spec_from_network(net: ResistanceNetwork, root: int = 0) -> GaussianSpec:
    """The field with covariance u_1 of the network."""
    return GaussianSpec(potential_density(net, 1.0).u, "potential_density", root)


def sample_gaussian(spec: GaussianSpec, rng=None, size: int | None = None) -> np.ndarray:
    """Mean-zero samples; one row per sample when ``size`` is given."""
    rng = as_generator(rng)
    if size is None:
        return spec.factor @ rng.standard_normal(spec.n)
    return rng.standard_normal((size, spec.n)) @ spec.factor.T


def tail_check(sigma: float, a: float, replicas: int, rng=None) -> dict:
    """Empirical P(|xi| > a) for xi ~ N(0, sigma^2) against exp(-a^2 / (2 sigma^2))."""
    if sigma <= 0 or a < 0:
        raise ValueError("need sigma > 0 and a >= 0")
    rng = as_generator(rng)
    xi = sigma * rng.standard_normal(replicas)
    freq = float(np.mean(np.abs(xi) > a))
    bound = math.exp(-a * a / (2 * sigma * sigma))
    se = math.sqrt(max(freq * (1 - freq), 1.0 / replicas) / replicas)
    return {"freq": freq, "bound": bound, "stderr": se, "holds": freq <= bound + 3 * se}


def gaussian_threshold_constant(alpha: float) -> float:
    """c_alpha for the Gaussian modulus bound.

    With r(u) = sqrt(2) u^(1 - alpha), the pair tail P(|G(x) - G(y)| > r(u))
    for d_G(x, y) <= u is at most exp(-u^(-2 alpha)), and 2 sum_{k>=n} r(2^(3-k))
    = 2 sqrt(2) 2^(3(1 - alpha)) / (1 - 2^-(1 - alpha)) * 2^(-(1 - alpha) n).
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    beta = 1.0 - alpha
    return 2.0 * math.sqrt(2.0) * 2.0 ** (3 * beta) / (1.0 - 2.0 ** (-beta))


def gaussian_rhs(profile: EntropyProfile, alpha: float, n: int) -> float:
    """sum_{k>=n} (k+1)^2 N_{d_G}(F, 2^-k)^2 exp(-2^(2 alpha (k-3)))."""
    _, rhs = chaining_rhs(profile, n, lambda u: 0.0, lambda u: math.exp(-u ** (-2 * alpha)))
    return rhs


def tail_entropy_sum(profile: EntropyProfile, alpha: float, k: int, tol: float = 1e-16) -> float:
    """sum_{l>=k} N_{d_G}(F, 2^-l)^2 exp(-2^(2 alpha l)), the tail sum for a sequence of fields.

    Unlike the modulus bound this has no (l+1)^2 factor and no shift by 3.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    terms = []
    l = k
    while True:
        t = profile.at(l) ** 2 * math.exp(-2.0 ** (2 * alpha * l))
        terms.append(t)
        if l >= profile.k_max and (t == 0 or t < tol * math.fsum(terms)):
            break
        l += 1
    return float(math.fsum(terms))


def gaussian_moduli(spec: GaussianSpec, levels: Sequence[int], replicas: int, seed: int = 0,
                    experiment: str = "gaussian-equicontinuity", batch: int = 2000) -> np.ndarray:
    """Per sample and level n, max |G(x) - G(y)| over pairs with d_G < 2^(1-n)."""
    pair_sets = [close_pairs(spec.space.d, 2.0 ** (1 - n)) for n in levels]
    out = np.zeros((replicas, len(levels)))
    done, chunk = 0, 0
    while done < replicas:
        m = min(batch, replicas - done)
        G = sample_gaussian(spec, stream(experiment, seed, chunk), m)
        for j, pairs in enumerate(pair_sets):
            if len(pairs):
                out[done:done + m, j] = np.abs(G[:, pairs[:, 0]] - G[:, pairs[:, 1]]).max(axis=1)
        done += m
        chunk += 1
    return out


def gaussian_equicontinuity_check(spec: GaussianSpec, alpha: float, n: int, replicas: int,
                                  seed: int = 0, moduli: np.ndarray | None = None,
                                  profile: EntropyProfile | None = None) -> dict:
    """Monte Carlo check of P(sup_{d_G < 2^(1-n)} |G(x)-G(y)| > c_alpha 2^(-(1-alpha) n)) <= RHS."""
    c_alpha = gaussian_threshold_constant(alpha)
    threshold = c_alpha * 2.0 ** (-(1 - alpha) * n)
    if moduli is None:
        moduli = gaussian_moduli(spec, [n], replicas, seed)[:, 0]
    freq = float(np.mean(moduli > threshold))
    profile = profile or entropy_profile(spec.space)
    rhs = gaussian_rhs(profile, alpha, n)
    se = math.sqrt(max(freq * (1 - freq), 1.0 / len(moduli)) / len(moduli))
    return {"freq": freq, "rhs": rhs, "threshold": threshold, "c_alpha": c_alpha,
            "stderr": se, "holds": freq <= rhs + 3 * se}


def modulus_cross_check(net: ResistanceNetwork, T: float, levels: Sequence[int], replicas: int,
                        seed: int = 0) -> dict:
    """Mean local-time and Gaussian moduli per level and their correlation across levels.

    Pairs are taken within resistance 2^(1-n) for the walk and within
    d_G 2^(1-n) for the field; the two statistics are expected to move
    together, which is reported rather than asserted.
    """
    lt = local_time_moduli(net, T, levels, replicas, seed).mean(axis=0)
    gm = gaussian_moduli(spec_from_network(net), levels, replicas, seed).mean(axis=0)
    corr = float(np.corrcoef(lt, gm)[0, 1]) if len(levels) > 1 and lt.std() > 0 and gm.std() > 0 \
        else float("nan")
    return {"levels": list(levels), "local_time": lt.tolist(), "gaussian": gm.tolist(),
            "correlation": corr}


def functionals(spec: GaussianSpec, samples: np.ndarray) -> dict:
    """The fixed battery of continuous functionals used to compare laws."""
    return {"sup": samples.max(axis=1), "root": samples[:, spec.root],
            "range": samples.max(axis=1) - samples.min(axis=1)}


def gaussian_convergence_experiment(specs: Sequence[GaussianSpec], limit: GaussianSpec,
                                    correspondences: Sequence[Correspondence] | None = None,
                                    replicas: int = 4000, seed: int = 0, tail_alpha: float = 0.5,
                                    tail_ks: Sequence[int] = (0, 2, 4)) -> dict:
    """Compare a sequence of fields with a limit field.

    For each term: the covariance-augmented distance along the given
    correspondence (identity when sizes agree and none is given), the
    largest covariance gap over matched pairs, the Wasserstein-1 distance
    between the laws of each functional, and the median function-augmented
    distance of a coupled sample (common normals; same size only).  The
    tail entropy sums at ``tail_ks`` are reported for each term so that their
    decay in k, uniformly along the sequence, can be inspected.
    """
    rows = []
    base = sample_gaussian(limit, stream("gaussian-limit", seed, 0), replicas)
    base_f = functionals(limit, base)
    for i, S in enumerate(specs):
        if correspondences is not None:
            C = correspondences[i]
        elif S.n == limit.n:
            C = Correspondence.diagonal(S.n)
        else:
            raise ValueError("a correspondence is needed when sizes differ")
        hcov = hcov_distance(S.space.d, S.cov, limit.space.d, limit.cov, C)
        a, b = C.pairs[:, 0], C.pairs[:, 1]
        cov_gap = float(np.abs(S.cov[np.ix_(a, a)] - limit.cov[np.ix_(b, b)]).max())
        samp = sample_gaussian(S, stream("gaussian-seq", seed, i), replicas)
        f = functionals(S, samp)
        w1 = {k: float(wasserstein_distance(f[k], base_f[k])) for k in f}
        coupled = None
        if S.n == limit.n:
            z = stream("gaussian-coupled", seed, i).standard_normal((min(replicas, 200), S.n))
            GS, GL = z @ S.factor.T, z @ limit.factor.T
            coupled = float(np.median([hpr_distance(S.space.d, gs, limit.space.d, gl, C)
                                       for gs, gl in zip(GS, GL)]))
        tails = {k: tail_entropy_sum(entropy_profile(S.space), tail_alpha, k) for k in tail_ks}
        rows.append({"index": i, "hcov": hcov, "cov_gap": cov_gap, "wasserstein": w1,
                     "coupled_hpr": coupled, "tail_sums": tails})
    return {"rows": rows, "replicas": replicas}
