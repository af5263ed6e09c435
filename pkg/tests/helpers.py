"""Shared test utilities: finite-difference gradient checking and small oracles."""

from __future__ import annotations

import numpy as np


def central_difference_check(loss_fn, params, n_probes=100, eps=1e-6,
                             rel_tol=1e-4, rng=None):
    """Compare analytic gradients of `loss_fn()` against central differences.

    `loss_fn` must rebuild the loss from scratch (deterministically) on
    every call; `params` are the leaf tensors to probe. Returns the worst
    relative error seen.
    """
    rng = rng or np.random.default_rng(0)
    loss = loss_fn()
    for p in params:
        p.zero_grad()
    loss.backward()
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
             for p in params]

    worst = 0.0
    for _ in range(n_probes):
        pi = int(rng.integers(len(params)))
        p = params[pi]
        idx = tuple(int(rng.integers(s)) for s in p.data.shape)
        original = p.data[idx]
        p.data[idx] = original + eps
        plus = loss_fn().item()
        p.data[idx] = original - eps
        minus = loss_fn().item()
        p.data[idx] = original
        numeric = (plus - minus) / (2 * eps)
        analytic = grads[pi][idx]
        scale = max(abs(numeric), abs(analytic), 1e-6)
        rel = abs(numeric - analytic) / scale
        worst = max(worst, rel)
        assert rel < rel_tol, (
            f"gradient mismatch at param {pi} index {idx}: "
            f"analytic {analytic}, numeric {numeric}, rel {rel}")
    return worst


def gradient_suite(n_probes=100, rel_tol=1e-4):
    """Finite-difference checks for every layer type and both losses.

    Returns {case_name: worst relative error}; raises on any violation.
    Cases cover dense, both conv paths, relu, tanh, dropout, average
    pooling, flatten, the log-variance clamp, the heteroscedastic NLL, and
    the waveform reconstruction loss (alone and jointly with the NLL).
    """
    import numpy as np

    from ubp.neural import (AvgPool1d, Conv1d, Dense, Dropout, Flatten,
                            Network, Relu, Tanh, Tensor, batch_triplet,
                            joint_ppg_loss, nll_loss, pulse_loss,
                            split_heteroscedastic)

    rng = np.random.default_rng(1234)
    results = {}

    def net_case(name, in_shape, layers, dropout_seed=None):
        net = Network(in_shape, layers, np.random.default_rng(
            np.random.SeedSequence([7, len(name)])))
        x = Tensor(rng.standard_normal((4, *in_shape)), requires_grad=True)

        def loss_fn():
            forward_rng = (np.random.default_rng(dropout_seed)
                           if dropout_seed is not None else None)
            out = net.forward(x, dropout_active=dropout_seed is not None,
                              rng=forward_rng)
            return (out * out).mean()

        results[name] = central_difference_check(
            loss_fn, net.params + [x], n_probes=n_probes, rel_tol=rel_tol,
            rng=np.random.default_rng(len(name)))

    net_case("dense", (6,), [Dense(5), Tanh(), Dense(3)])
    net_case("conv_small", (12, 3), [Conv1d(4, 5), Relu(), Flatten(), Dense(2)])
    net_case("conv_large", (10, 24), [Conv1d(4, 5), Relu(), Flatten(), Dense(2)])
    net_case("avg_pool", (12, 4), [AvgPool1d(3), Flatten(), Dense(2)])
    net_case("dropout", (8,), [Dense(6), Relu(), Dropout(0.4), Dense(2)],
             dropout_seed=99)

    # log-variance clamp inside the heteroscedastic split
    head = Network((5,), [Dense(4)], np.random.default_rng(3))
    x = Tensor(rng.standard_normal((6, 5)), requires_grad=True)
    labels = rng.standard_normal((6, 2))

    def clamp_loss():
        return nll_loss(split_heteroscedastic(head.forward(x)), labels)

    results["clamped_nll"] = central_difference_check(
        clamp_loss, head.params + [x], n_probes=n_probes, rel_tol=rel_tol,
        rng=np.random.default_rng(55))

    # pulse reconstruction loss through the in-graph derivative triplet
    signal = Tensor(rng.standard_normal((3, 20)), requires_grad=True)
    truth = np.cumsum(rng.standard_normal((3, 20)), axis=1)
    triplet_truth = (truth, np.diff(truth, axis=1),
                     np.diff(truth, n=2, axis=1))

    def pulse_fn():
        return pulse_loss(batch_triplet(signal), triplet_truth)

    results["pulse_loss"] = central_difference_check(
        pulse_fn, [signal], n_probes=n_probes, rel_tol=rel_tol,
        rng=np.random.default_rng(66))

    # joint loss: gradients must flow through both terms
    head2 = Network((20,), [Dense(4)], np.random.default_rng(8))

    def joint_fn():
        het = split_heteroscedastic(head2.forward(signal))
        return joint_ppg_loss(pulse_loss(batch_triplet(signal), triplet_truth),
                              nll_loss(het, labels[:3]))

    results["joint_loss"] = central_difference_check(
        joint_fn, [signal] + head2.params, n_probes=n_probes, rel_tol=rel_tol,
        rng=np.random.default_rng(77))
    return results


def cross_correlation_peak_lag(a, b, max_lag):
    """Lag (in samples) of b relative to a at the cross-correlation peak."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lags = np.arange(-max_lag, max_lag + 1)
    margin = max_lag
    core_a = a[margin:len(a) - margin]
    scores = [float(np.dot(core_a, np.roll(b, -lag)[margin:len(b) - margin]))
              for lag in lags]
    return int(lags[int(np.argmax(scores))])
