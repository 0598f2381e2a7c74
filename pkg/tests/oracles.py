"""Independent brute-force reference implementations.

Everything here is deliberately slow and structurally different from the
library code: direct double sums instead of FFTs, explicit permutation
and tuple enumeration instead of vectorised index tables.  These are the
ground truth the fast paths are checked against.
"""

import itertools

import numpy as np


def slow_dft_coeffs(samples, length):
    """O(M^2) Fourier coefficients under the package convention."""
    m = len(samples)
    x = np.arange(m) * (length / m)
    k = np.fft.fftfreq(m, d=1.0 / m).astype(int)
    out = np.zeros(m, dtype=complex)
    for i, kk in enumerate(k):
        xi = 2.0 * np.pi * kk / length
        out[i] = np.sum(samples * np.exp(-1j * xi * x)) / m
    return out


def slow_l2_norm_squared(samples, length):
    """Rectangle-rule spatial L^2 norm squared (exact for trig polynomials)."""
    m = len(samples)
    return float(np.sum(np.abs(samples) ** 2) * (length / m))


def slow_derivative_of_square(coeffs, length, k_keep):
    """Direct convolution for the coefficients of (u^2)_x.

    Retains exactly the pairs whose sum mode lies in k_keep (and takes
    inputs from k_keep too), mirroring the projection of the square of the
    retained field.
    """
    m = len(coeffs)
    k_of = np.fft.fftfreq(m, d=1.0 / m).astype(int)
    index_of = {int(kk): i for i, kk in enumerate(k_of)}
    keep = set(int(k) for k in k_keep)
    out = np.zeros(m, dtype=complex)
    for k1 in keep:
        for k2 in keep:
            ks = k1 + k2
            if ks in keep:
                out[index_of[ks]] += coeffs[index_of[k1]] * coeffs[index_of[k2]]
    for kk in keep:
        xi = 2.0 * np.pi * kk / length
        out[index_of[kk]] *= 1j * xi
    mask = np.zeros(m, dtype=bool)
    for kk in keep:
        mask[index_of[kk]] = True
    out[~mask] = 0.0
    return out


def slow_lambda_k(symbol_fn, coeff_list, length, modes):
    """Nested-loop multilinear sum over zero-sum tuples of the given modes.

    symbol_fn takes k scalar frequencies; coeff_list maps mode -> coeff
    per field (dictionaries keyed by integer mode).
    """
    k = len(coeff_list)
    total = 0.0 + 0.0j
    dxi = 2.0 * np.pi / length
    for combo in itertools.product(modes, repeat=k - 1):
        last = -sum(combo)
        if last not in modes:
            continue
        tup = combo + (last,)
        prod = 1.0 + 0.0j
        for field_coeffs, mode in zip(coeff_list, tup):
            prod *= field_coeffs.get(mode, 0.0)
        if prod != 0.0:
            total += symbol_fn(*(dxi * np.asarray(tup, dtype=float))) * prod
    return length * total


def brute_symmetrize(fn, args):
    """Explicit k! permutation average of fn at one argument tuple."""
    k = len(args)
    vals = [fn(*(args[i] for i in perm)) for perm in itertools.permutations(range(k))]
    return sum(vals) / len(vals)


def richardson_orders(errors):
    """Convergence orders from consecutive errors of a halving sequence."""
    errors = np.asarray(errors, dtype=float)
    return np.log2(errors[:-1] / errors[1:])


def random_zero_sum_tuples(rng, k, n, scale_hi=256.0, scale_lo=0.05):
    """Zero-sum real k-tuples with log-uniform component magnitudes."""
    mags = np.exp(rng.uniform(np.log(scale_lo), np.log(scale_hi), size=(n, k - 1)))
    signs = rng.choice([-1.0, 1.0], size=(n, k - 1))
    head = mags * signs
    last = -head.sum(axis=1, keepdims=True)
    return np.hstack([head, last])
