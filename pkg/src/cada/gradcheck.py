"""Finite-difference gradient checks for the op catalog and the fused losses.

Every differentiable op is checked against central differences on random
inputs (scalarized through a fixed random weighting so one backward covers
every coordinate).  The reversal op is checked against its exact contract
instead, since its backward is intentionally *not* the derivative of its
identity forward.  The fused training losses are checked with the reversal
node omitted, frozen dropout masks, frozen noise, and detached attention weights,
which is the true gradient of the function the trainer differentiates.
"""

from __future__ import annotations

import numpy as np

from . import attention as at
from . import autodiff as ad
from . import model as md
from . import training as tr

TOLERANCE = 1e-4


def _away_from_zero(x, margin=0.1):
    bump = np.where(np.abs(x) < margin, np.sign(x) * margin + (x == 0) * margin, 0.0)
    return x + bump


def _op_cases(rng):
    """Yield (name, f, x0) finite-difference cases, several per op."""
    for _ in range(10):
        r1 = rng.standard_normal((3, 4))
        c1 = rng.standard_normal((3, 4))
        bias = rng.standard_normal(4)
        col = rng.standard_normal((3, 1))
        yield ("add", lambda t, c=c1, r=r1: ad.tensor_sum(ad.mul(ad.add(t, c), r)),
               rng.standard_normal((3, 4)))
        yield ("add", lambda t, c=bias, r=r1: ad.tensor_sum(ad.mul(ad.add(t, c), r)),
               rng.standard_normal((3, 4)))
        yield ("mul", lambda t, c=c1, r=r1: ad.tensor_sum(ad.mul(ad.mul(t, c), r)),
               rng.standard_normal((3, 4)))
        # sigma-style broadcast: a column scales a full matrix
        yield ("mul", lambda t, c=c1, r=r1: ad.tensor_sum(ad.mul(ad.mul(t, c), r)),
               rng.standard_normal((3, 1)))
        yield ("mul", lambda t, c=col, r=r1: ad.tensor_sum(ad.mul(ad.mul(c, t), r)),
               rng.standard_normal((3, 4)))
        w = rng.standard_normal((4, 2))
        r2 = rng.standard_normal((3, 2))
        yield ("matmul", lambda t, c=w, r=r2: ad.tensor_sum(ad.mul(ad.matmul(t, c), r)),
               rng.standard_normal((3, 4)))
        left = rng.standard_normal((3, 4))
        r3 = rng.standard_normal((3, 2))
        yield ("matmul", lambda t, c=left, r=r3: ad.tensor_sum(ad.mul(ad.matmul(c, t), r)),
               rng.standard_normal((4, 2)))
        yield ("relu", lambda t, r=r1: ad.tensor_sum(ad.mul(ad.relu(t), r)),
               _away_from_zero(rng.standard_normal((3, 4))))
        yield ("sigmoid", lambda t, r=r1: ad.tensor_sum(ad.mul(ad.sigmoid(t), r)),
               2.0 * rng.standard_normal((3, 4)))
        yield ("exp", lambda t, r=r1: ad.tensor_sum(ad.mul(ad.exp(t), r)),
               rng.uniform(-2.0, 2.0, (3, 4)))
        yield ("log", lambda t, r=r1: ad.tensor_sum(ad.mul(ad.log(t), r)),
               rng.uniform(0.2, 3.0, (3, 4)))
        yield ("sum", lambda t: ad.tensor_sum(t), rng.standard_normal((3, 4)))
        r4 = rng.standard_normal(4)
        yield ("sum", lambda t, r=r4: ad.tensor_sum(ad.mul(ad.tensor_sum(t, axis=0), r)),
               rng.standard_normal((3, 4)))
        r5 = rng.standard_normal(3)
        yield ("sum", lambda t, r=r5: ad.tensor_sum(ad.mul(ad.tensor_sum(t, axis=1), r)),
               rng.standard_normal((3, 4)))
        yield ("mean", lambda t: ad.tensor_mean(t), rng.standard_normal((3, 4)))
        yield ("mean", lambda t, r=r4: ad.tensor_sum(ad.mul(ad.tensor_mean(t, axis=0), r)),
               rng.standard_normal((3, 4)))
        yield ("softmax", lambda t, r=r1: ad.tensor_sum(ad.mul(ad.softmax(t, axis=-1), r)),
               2.0 * rng.standard_normal((3, 4)))
        labels = rng.integers(0, 4, size=3)
        yield ("cross_entropy", lambda t, y=labels: ad.cross_entropy(t, y),
               rng.standard_normal((3, 4)))
        label = int(rng.integers(0, 4))
        yield ("cross_entropy", lambda t, y=label: ad.cross_entropy(t, y),
               rng.standard_normal(4))
        noise = rng.standard_normal((3, 4))
        yield ("noise_add", lambda t, c=noise, r=r1: ad.tensor_sum(ad.mul(ad.add(t, c), r)),
               rng.standard_normal((3, 4)))
        mask = (rng.random(4) >= 0.5) * 2.0
        yield ("mask_mul", lambda t, c=mask, r=r1: ad.tensor_sum(ad.mul(ad.mul(t, c), r)),
               rng.standard_normal((3, 4)))


def check_ops(rng):
    """Max finite-difference error per differentiable op, over random cases."""
    worst = {}
    for name, f, x0 in _op_cases(rng):
        err = ad.finite_diff_check(f, x0)
        worst[name] = max(worst.get(name, 0.0), err)
    return worst


def check_gradient_reversal(rng, cases=100):
    """Bitwise contract: identity forward, -strength * upstream backward.

    Returns 0.0 when every case is exact, inf otherwise (so it folds into the
    same pass/fail table as the finite-difference errors).
    """
    for _ in range(cases):
        x = rng.standard_normal((4, 3)) * 10.0 ** rng.integers(-3, 4)
        strength = float(rng.choice([0.0, 0.5, 1.0, rng.uniform(0.0, 5.0)]))
        weights = rng.standard_normal(x.shape)
        tape = ad.Tape()
        leaf = tape.leaf(x)
        out = ad.gradient_reversal(leaf, strength)
        if not np.array_equal(out.values, x):
            return float("inf")
        root = ad.tensor_sum(ad.mul(out, weights))
        tape.backward(root)
        if not np.array_equal(tape.grad(leaf), -strength * weights):
            return float("inf")
    return 0.0


def _stack_margin(x, layers, masks):
    """Smallest |pre-activation| over unmasked relu units; returns (margin, out)."""
    margin = np.inf
    h = x
    for layer, mask in zip(layers, masks):
        pre = h @ layer.weight + layer.bias
        live = np.abs(pre)[:, mask != 0.0]
        if live.size:
            margin = min(margin, float(live.min()))
        h = np.maximum(pre, 0.0) * mask
    return margin, h


def _kink_margin(params, x_s, x_t, rand, attention_w):
    """Distance from the nearest relu kink anywhere in the four-part loss graph.

    Finite differences lie at a kink, so the fused case is redrawn until every
    pre-activation that can reach the loss clears this margin.  Masked units
    cannot reach it and are ignored.
    """
    m_s, f_s = _stack_margin(x_s, params.feature, rand.feature_plan.masks)
    m_t, f_t = _stack_margin(x_t, params.feature, rand.feature_plan.masks)
    h_s = f_s * (1.0 + attention_w)
    m_c, _ = _stack_margin(h_s, params.classifier_trunk, rand.classifier_plan.masks)
    m_ds, _ = _stack_margin(f_s, params.discriminator_trunk, rand.discriminator_plan.masks)
    m_dt, _ = _stack_margin(f_t, params.discriminator_trunk, rand.discriminator_plan.masks)
    return min(m_s, m_t, m_c, m_ds, m_dt)


def _fused_case(variant, rng, min_margin=1e-3):
    """A small full training-loss instance with every source of randomness frozen.

    Zero-init biases can park a pre-activation exactly on a relu kink when a
    sample's whole hidden vector dies, so biases get a jitter and the case is
    redrawn until the graph is locally smooth around the evaluation point.
    """
    input_dim, n_classes = 4, 3
    n_s, n_t, mc = 5, 4, 3
    rate = 0.4
    for _ in range(100):
        params = md.init_params(input_dim, n_classes, rng, feature_widths=(8, 6),
                                classifier_width=6, discriminator_width=6)
        for name, arr in params.named_arrays():
            if name.endswith(".bias"):
                arr += rng.uniform(-0.3, 0.3, size=arr.shape)
        x_s = rng.standard_normal((n_s, input_dim))
        y_s = rng.integers(0, n_classes, size=n_s)
        x_t = rng.standard_normal((n_t, input_dim))
        rand = tr.StepRandomness(
            feature_plan=md.sample_dropout_plans(rate, [8, 6], 1, rng)[0],
            classifier_plan=md.sample_dropout_plans(rate, [6], 1, rng)[0],
            discriminator_plan=md.sample_dropout_plans(rate, [6], 1, rng)[0],
            classifier_noise=rng.standard_normal((mc, n_s, n_classes)),
            domain_noise_source=rng.standard_normal((mc, n_s, 2)),
            domain_noise_target=rng.standard_normal((mc, n_t, 2)),
        )

        tape = ad.Tape()
        f = md.feature_extract(tape, x_s, params, plan=rand.feature_plan)
        if variant == "cada-a":
            head = md.discriminator_forward(tape, f, params,
                                            plan=rand.discriminator_plan, grl_strength=None)
            attention_w = at.aleatoric_attention(f, head, 1e4).weights
        else:
            plans = md.sample_dropout_plans(rate, [6], mc, rng)
            attention_w = at.predictive_attention(f, params, plans, 1e4).weights
        if _kink_margin(params, x_s, x_t, rand, attention_w) > min_margin:
            break
    else:
        raise RuntimeError("could not draw a fused case away from relu kinks")

    def loss_parts(p):
        tape = ad.Tape()
        parts = tr.build_losses(tape, p, x_s, y_s, x_t, rand, mc,
                                attention_w=attention_w, grl_strength=None)
        root = ad.add(
            ad.add(parts.classifier_loss, parts.classifier_var_loss),
            ad.add(parts.domain_loss, parts.domain_var_loss),
        )
        return root, tape

    def loss_value(p):
        return loss_parts(p)[0].item()

    def loss_gradients(p):
        root, tape = loss_parts(p)
        tape.backward(root)
        return tr.collect_gradients(tape, p)

    return params, loss_value, loss_gradients


def check_fused_loss(variant, rng, step=1e-5):
    """Max relative error over every parameter coordinate of the fused loss."""
    params, loss_value, loss_gradients = _fused_case(variant, rng)
    analytic = loss_gradients(params)
    worst = 0.0
    for name, arr in params.named_arrays():
        grad = analytic[name]
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + step
            hi = loss_value(params)
            arr[idx] = keep - step
            lo = loss_value(params)
            arr[idx] = keep
            numeric = (hi - lo) / (2.0 * step)
            denom = max(abs(grad[idx]), abs(numeric), 1e-8)
            worst = max(worst, abs(grad[idx] - numeric) / denom)
    return worst


def run_all(seed=0):
    """The full suite; returns [(name, max_rel_err), ...] in report order."""
    rng = np.random.default_rng(seed)
    results = list(check_ops(rng).items())
    results.append(("gradient_reversal", check_gradient_reversal(rng)))
    results.append(("fused_loss_aleatoric_attention", check_fused_loss("cada-a", rng)))
    results.append(("fused_loss_predictive_attention", check_fused_loss("cada-p", rng)))
    return results
