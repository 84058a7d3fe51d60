"""Pure numpy implementations of the link-budget kernels.

Same signatures and array layout as the compiled ``_ckernels`` module.
"""
import numpy as np


def _signal_power(direct, coef, phases):
    # |a + sum_m coef_m e^{j phi_m}|^2 for every (s, u, r, n)
    if coef.shape[2] == 0:
        return (direct * direct)[:, :, None, :]
    steer = np.exp(1j * phases)
    field = direct[:, :, None, :] + np.einsum("surnm,rm->surn", coef, steer)
    return field.real ** 2 + field.imag ** 2


def best_snr(direct, coef, phases, scale):
    S, U, N = direct.shape
    if U == 0:
        return (np.zeros((S, N)), np.full((S, N), -1, dtype=np.int64),
                np.full((S, N), -1, dtype=np.int64))
    power = scale * _signal_power(direct, coef, phases)
    R = power.shape[2]
    flat = power.reshape(S, U * R, N)
    # argmax keeps the first maximum, i.e. the lowest (u, r) pair
    idx = np.argmax(flat, axis=1)
    snr = np.take_along_axis(flat, idx[:, None, :], axis=1)[:, 0, :]
    uav = (idx // R).astype(np.int64)
    ris = (idx % R).astype(np.int64) if coef.shape[2] else np.full((S, N), -1, dtype=np.int64)
    return np.ascontiguousarray(snr), uav, ris


def rate_sum_batch(direct, coef, phases, scale, bandwidth, weights, thresholds, bonus=0.0):
    out = np.empty(phases.shape[0])
    S, U, N = direct.shape
    for p in range(phases.shape[0]):
        if U == 0:
            out[p] = 0.0
            continue
        power = scale * _signal_power(direct, coef, phases[p])
        best = power.reshape(S, -1, N).max(axis=1)
        rate = np.where(best >= thresholds, np.log2(1.0 + best) + bonus / bandwidth, 0.0)
        out[p] = bandwidth * float(np.dot(weights, rate.sum(axis=1)))
    return out
