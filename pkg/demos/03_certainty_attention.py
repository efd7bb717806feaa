#!/usr/bin/env python3
"""How the attention pass reweights feature units.

The discriminator's uncertainty is differentiated w.r.t. the features; a
positive product of feature value and negated uncertainty gradient marks a
unit whose evidence the discriminator is certain about, and those units get
amplified in proportion to how certain the discriminator currently is.
"""

import numpy as np

import cada.autodiff as ad
from cada.attention import (
    aleatoric_attention,
    apply_attention,
    attention_weights,
    predictive_attention,
)
from cada.model import discriminator_forward, feature_extract, init_params, sample_dropout_plans

# --- the scoring rule on a hand-built example --------------------------
# product > 0: keep score as is.  product < 0: multiply by a large constant
# so the softmax sends its weight to ~0.  certainty scales the whole row.
res = attention_weights(
    features=np.array([2.0, -3.0, 1.0]),
    grad=np.array([1.0, 1.0, 0.0]),
    certainty=1.0,
    masking_constant=1e4,
)
print("products:", res.product)        # [ 2, -3,  0]
print("scores:  ", res.scores)         # [ 2, -30000, 0]
print("weights: ", res.weights)        # softmax over the surviving scores
print("sum == certainty:", res.weights.sum())

# half certainty halves every weight
half = attention_weights(np.array([2.0, -3.0, 1.0]), np.array([1.0, 1.0, 0.0]),
                         0.5, 1e4)
print("half-certainty weights:", half.weights)

# h = f * (1 + w): amplification only, never suppression
print("reweighted:", apply_attention(np.array([1.0, 2.0]), np.array([0.5, 0.25])))

# --- both gates on a real network --------------------------------------
rng = np.random.default_rng(5)
params = init_params(3, 2, rng=6, feature_widths=(6, 4), discriminator_width=4)
x = rng.standard_normal((4, 3))

# aleatoric gate: one discriminator pass, certainty = 1 - variance head
tape = ad.Tape()
f = feature_extract(tape, tape.leaf(x), params)
head = discriminator_forward(tape, f, params)
a = aleatoric_attention(f, head, masking_constant=1e4)
print("\naleatoric gate:")
print("  certainty:", np.round(a.certainty, 4))
print("  row sums: ", np.round(a.weights.sum(axis=1), 4))

# predictive gate: averaged over dropout plans, certainty = 1 - normalized
# predictive uncertainty
plans = sample_dropout_plans(0.5, [4], count=10, rng=7)
tape = ad.Tape()
f = feature_extract(tape, tape.leaf(x), params)
p = predictive_attention(f, params, plans, masking_constant=1e4)
print("predictive gate:")
print("  certainty:", np.round(p.certainty, 4))
print("  row sums: ", np.round(p.weights.sum(axis=1), 4))

# clearly negative products are masked to numerical zero (products within
# ~1/masking_constant of zero only get partial suppression)
print("\nmax weight where product < -0.01 (both gates):",
      float(a.weights[a.product < -0.01].max(initial=0.0)),
      float(p.weights[p.product < -0.01].max(initial=0.0)))
